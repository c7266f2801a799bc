"""Coordinate-level exterior calculus on R^n."""

from .algebra import (contract, flat, hodge_inverse, hodge_star, inner_product_pointwise,
                      inner_values, minors, pairing_field, sharp, transform_values, wedge,
                      wedge_values)
from .calculus import (curl3, d_values, divergence, exterior_derivative, lie_adjoint_values,
                       lie_derivative, lie_derivative_adjoint, lie_values, pullback, pushforward,
                       vector_to_two_form)
from .fields import (DiffeoMap, DimensionError, FieldMeta, KFormField, KVectorField,
                     QuadratureGrid, TestForm, VectorField)
from .multiindex import MultiIndex, all_multi_indices, basis, n_channels, sort_sign
from .norms import (ball_mask, fiber_norm, holder_seminorm_estimate, l2_pairing, lp_norm,
                    refinement_estimate, w11_norm, weak_derivative_check)

__all__ = [
    "DiffeoMap", "DimensionError", "FieldMeta", "KFormField", "KVectorField", "MultiIndex",
    "QuadratureGrid", "TestForm", "VectorField", "all_multi_indices", "ball_mask", "basis",
    "contract", "curl3", "d_values", "divergence", "exterior_derivative", "fiber_norm", "flat",
    "hodge_inverse", "hodge_star", "holder_seminorm_estimate", "inner_product_pointwise",
    "inner_values", "l2_pairing", "lie_adjoint_values", "lie_derivative",
    "lie_derivative_adjoint", "lie_values", "lp_norm", "minors", "n_channels", "pairing_field",
    "pullback", "pushforward", "refinement_estimate", "sharp", "sort_sign", "transform_values",
    "vector_to_two_form", "w11_norm", "weak_derivative_check", "wedge", "wedge_values",
]
