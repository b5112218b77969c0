"""Robustness certification for decision trees and tree ensembles on crash data."""

from .data_io import Dataset, Example, export_libsvm, parse_libsvm
from .model import Box, Ensemble, Node, Tree, box_intersect, compute_leaf_boxes, dump_ensemble, load_ensemble, predict
from .verifier import Certificate, Report, VerifyParams, certify_example, run_verification, validate_report

__version__ = "0.1.0"

__all__ = [
    "Box",
    "Certificate",
    "Dataset",
    "Ensemble",
    "Example",
    "Node",
    "Report",
    "Tree",
    "VerifyParams",
    "box_intersect",
    "certify_example",
    "compute_leaf_boxes",
    "dump_ensemble",
    "export_libsvm",
    "load_ensemble",
    "parse_libsvm",
    "predict",
    "run_verification",
    "validate_report",
]
