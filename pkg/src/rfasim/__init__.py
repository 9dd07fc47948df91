"""Radiofrequency catheter ablation with elastic tissue contact.

Modules: contact mechanics (:mod:`rfasim.contact`), power split
(:mod:`rfasim.powersplit`), meshing (:mod:`rfasim.mesh`), P1 finite elements
(:mod:`rfasim.femcore`), potential, bioheat and flow solvers, lesion metrics
and the end-to-end pipeline.
"""
__version__ = "0.1.0"

from .params import DEFAULT_MATERIALS, MaterialTable, Region  # noqa: E402,F401

__all__ = ["DEFAULT_MATERIALS", "MaterialTable", "Region", "__version__"]
