from distillkit.analysis.features import layer_weights, weighted_sum_features
from distillkit.analysis.ranks import (
    HIGHER,
    LOWER,
    ResultsTable,
    aggregate_ranks,
    exact_average_ranks,
    fractional_ranks,
    parse_results_csv,
    rank_report,
    read_results_csv,
    round_half_away,
)
from distillkit.analysis.similarity import layer_similarity, linear_cka, probe_states, similarity_matrix

__all__ = [
    "HIGHER", "LOWER", "ResultsTable", "aggregate_ranks", "exact_average_ranks", "fractional_ranks",
    "layer_similarity", "layer_weights", "linear_cka", "parse_results_csv", "probe_states", "rank_report",
    "read_results_csv", "round_half_away", "similarity_matrix", "weighted_sum_features",
]
