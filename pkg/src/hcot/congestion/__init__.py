"""Horizontal lattices, congested shortest paths and Wardrop equilibria."""

from .graph import Network, two_link_network
from .lattice import (HorizontalLattice, NodeMeasure, build_lattice, c_phi, holder_diagnostic,
                      snap_measure, weighted_length)
from .wardrop import (CertificateReport, CongestionFunction, PathFlow, TrafficAssignment,
                      assignment_from_paths, detour_perturbation, equilibrium_certificate,
                      intensity_to_field, solve_wardrop, total_cost)

__all__ = [
    "Network", "two_link_network", "HorizontalLattice", "NodeMeasure", "build_lattice", "c_phi",
    "holder_diagnostic", "snap_measure", "weighted_length", "CertificateReport", "CongestionFunction",
    "PathFlow", "TrafficAssignment", "assignment_from_paths", "detour_perturbation",
    "equilibrium_certificate", "intensity_to_field", "solve_wardrop", "total_cost",
]
