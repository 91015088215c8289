"""Chart atlases, quadrature covers and the built-in manifold catalog."""

from affgeom.atlas.charts import Atlas, AtlasError, Chart, TransitionMap, compose, transition
from affgeom.atlas.cover import QuadratureCover, QuadraturePiece
from affgeom.atlas.catalog import (
    HOPF_DECK,
    CatalogEntry,
    ChartedManifold,
    DeckGroup,
    builtin_manifold,
    hopf_covering_point,
    list_catalog,
)
from affgeom.atlas.manifest import (
    ExpressionError,
    compile_expression,
    dump_manifest,
    load_manifest,
    manifold_from_dict,
    manifold_to_dict,
)

__all__ = [
    "Atlas", "AtlasError", "Chart", "TransitionMap", "compose", "transition",
    "QuadratureCover", "QuadraturePiece",
    "HOPF_DECK", "CatalogEntry", "ChartedManifold", "DeckGroup", "builtin_manifold",
    "hopf_covering_point", "list_catalog",
    "ExpressionError", "compile_expression", "dump_manifest", "load_manifest",
    "manifold_from_dict", "manifold_to_dict",
]
