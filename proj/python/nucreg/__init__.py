"""Nuclei point-set registration of histology tiles.

Points are (N, 2) float arrays of (x, y) pixel coordinates, images are
(H, W) or (H, W, 3) uint8 arrays, deformation fields are (H, W, 2) backward
displacements.
"""

from ._nucreg import (
    FormatError,
    KdTree,
    NumericalError,
    RegistrationError,
    RigidTransform,
    TpsModel,
    __version__,
    ara,
    cpd_lle_register,
    cubic_bspline_basis,
    evaluate_by_nuclei,
    extract_points,
    gaussian_kernel,
    icp,
    lle_weights,
    phase_correlation_translation,
    pointset_mse,
    read_field,
    read_points_csv,
    refine,
    register_pointsets,
    rtre,
    synth,
    tps_field,
    tps_fit,
    tre,
    warp_image,
    write_field,
)

__all__ = [name for name in dir() if not name.startswith("_")]
