"""Token-level KV-cache retrieval with 1-bit group-quantized keys."""

from .baselines import (
    EvictionState,
    PageSummaries,
    build_page_summaries,
    h2o_accumulate,
    h2o_select,
    quest_page_scores,
    quest_select,
    quest_select_quantized,
    streaming_llm_select,
)
from .kvcore import Selection, exact_scores, full_attention, gather_attention, softmax, topk_oracle
from .quant1bit import (
    LoadRatio,
    PackedKeys,
    approx_scores,
    dequantize,
    load_ratio_fier,
    load_ratio_quest,
    quantize,
)
from .retrieval import BudgetPolicy, RetrievalResult, SideState, fier_attend, fier_select, run_policy

__version__ = "0.1.0"
