"""Exterior differential systems: symmetry reduction, integrable extensions and
Darboux integrability, with exact symbolic results backed by sampled checks."""

from .symexpr import SamplePlan, ZeroCertificate, is_zero, parse, to_str
from .geometry import (Chart, DiffForm, SmoothMap, VectorField, df, exterior_derivative, hook,
                       lie_bracket, lie_derivative, pullback, wedge)
from .eds import (Coframe, EDSPresentation, derived_system, ideals_equal, membership, span_equal,
                  structure_equations)
from .jets import JetChart, contact_system, prolong_field, total_derivative
from .reduction import (LieAction, QuotientSpec, induced_projection, is_integrable_extension, is_symmetry,
                        is_transverse, quotient)
from .darboux import (Decomposition, FirstIntegralBasis, LieAlgebra, check_darboux, check_max_compatible,
                      diagonal_reduction, has_2dim_subalgebra, projected_algebras, vessiot_dimension)
from .dsl import Model, parse_model
from .cli import corpus_example, corpus_names, run

__all__ = [
    "SamplePlan", "ZeroCertificate", "is_zero", "parse", "to_str",
    "Chart", "DiffForm", "SmoothMap", "VectorField", "df", "exterior_derivative", "hook", "lie_bracket",
    "lie_derivative", "pullback", "wedge",
    "Coframe", "EDSPresentation", "derived_system", "ideals_equal", "membership", "span_equal",
    "structure_equations",
    "JetChart", "contact_system", "prolong_field", "total_derivative",
    "LieAction", "QuotientSpec", "induced_projection", "is_integrable_extension", "is_symmetry", "is_transverse",
    "quotient",
    "Decomposition", "FirstIntegralBasis", "LieAlgebra", "check_darboux", "check_max_compatible",
    "diagonal_reduction", "has_2dim_subalgebra", "projected_algebras", "vessiot_dimension",
    "Model", "parse_model", "corpus_example", "corpus_names", "run",
]
