"""Coarse-to-fine cascaded named-entity recognition toolkit.

Stage one tags mention boundaries with coarse types; stage two classifies each
mention into a hierarchical fine-grained label space with configurable mention
representations and decode-time filter functions.  An end-to-end baseline and
a multi-level evaluation harness share the same corpus and scoring code.
"""

from .taxonomy import (
    DEFAULT_COARSE_TYPES,
    FineLabel,
    Level,
    Taxonomy,
    coarse_of,
    load_taxonomy,
    match_level,
    parse_label,
    truncate,
)
from .codec import (
    SubwordAlignment,
    align_to_subwords,
    iob2_to_spans,
    project_from_subwords,
    spans_to_iob2,
)
from .corpus import (
    Document,
    Mention,
    Sentence,
    Token,
    concat_corpora,
    merge_silver,
    read_column_corpus,
    read_standoff_mentions,
    write_column_corpus,
    write_predictions,
)
from .encoder import Encoder, EncoderConfig, train_step
from .coarse_tagger import (
    TaggerConfig,
    TaggerModel,
    predict_tags,
    train_baseline,
    train_tagger,
)
from .fine_classifier import (
    ClassifierConfig,
    ClassifierModel,
    FilterConfig,
    ProbVector,
    classify,
    decode_label,
    filter_coarse_type,
    filter_pass_through,
    filter_threshold,
    render_entity_bounded,
    render_entity_masked,
    render_masked,
    train_classifier,
)
from .evaluation import (
    EvalReport,
    evaluate_documents,
    hier_accuracy,
    mention_prf,
    seed_stats,
)
from .pipeline import CascadeConfig, run_baseline, run_cascade, run_experiment

__version__ = "0.1.0"
