from .fidelity import (BatchReport, EvalReport, batch_fidelity, emulator_host, format_table,
                       paired_fidelity_run, write_batch_report, write_report)
from .guide import recommend_shot_method
from .metrics import ClassMetrics, macro_metrics
from .nonparam import StatResult, cliffs_delta, wilcoxon_signed_rank
from .similarity import SimilarityScore, canonical_response, hamming_similarity

__all__ = ["BatchReport", "ClassMetrics", "EvalReport", "SimilarityScore", "StatResult", "batch_fidelity",
           "canonical_response", "cliffs_delta", "emulator_host", "format_table", "hamming_similarity",
           "macro_metrics", "paired_fidelity_run", "recommend_shot_method", "wilcoxon_signed_rank",
           "write_batch_report", "write_report"]
