"""Grid automata that recognize formal languages."""

from ._core import (
    GridparseError,
    Nca,
    Transformer,
    chart_indicator,
    cnf_counts,
    detokenize,
    languages,
    member,
    ood_set,
    pure_nested,
    run,
    self_test,
    tokenize,
    train,
)

__all__ = [
    "GridparseError",
    "Nca",
    "Transformer",
    "chart_indicator",
    "cnf_counts",
    "detokenize",
    "languages",
    "member",
    "ood_set",
    "pure_nested",
    "run",
    "self_test",
    "tokenize",
    "train",
]
