from .corpus import (
    SYSTEM_SPEAKER, UNKNOWN_ID, PADDING_ID, COLUMN_ORDERS, SELF_LINK_CATEGORIES,
    LogParseError, AnnotationFormatError, CorpusIntegrityError,
    LogLine, Utterance, LinkAnnotation, ChatLog, Vocabulary, CorpusStats,
    parse_log_line, parse_log, tokenize, load_annotations, annotations_to_text,
    utterances_to_jsonl, utterances_from_jsonl, read_chat_log, read_corpus_dir,
    build_vocabulary, corpus_stats, split_stats, utterance_categories, self_link_taxonomy
)
from .unionfind import UnionFind
from .substrate import (
    NumericFailure, ParameterStore, OptimizerState, feature_dim,
    lstm_forward, lstm_backward, bilstm_forward, bilstm_backward, encode_sequences, encode_sequences_backward,
    sequence_encode, adam_step, clip_by_global_norm, check_gradients
)
from .encoder import EncodedUtterance, encode_timestamp, encode_speaker, encode_utterance, load_embedding_vectors
from .linker import (
    OutsideWindowError, MentionMemory, InteractionFeature, PointingDistribution,
    time_difference, mention_count, update_mention_memory, topic_coherence, interaction_features,
    pointing_distribution, link_loss
)
from .objectives import PairSample, pair_probability, pair_loss, sample_pairs, joint_loss
from .metrics import (
    PRF, Clustering, MetricBundle, link_prf, self_link_prf, self_link_prf_by_category,
    scaled_vi, ari, exact_match_f1, metric_bundle
)
from .model import DisentanglementModel, LinkTarget, gold_clustering, build_link_targets, batch_loss_and_grads
from .decoder import DecodeResult, ThreadState, best_non_self, predict_parent, step, build_threads, baseline_previous, decode_log
from .trainer import TrainConfig, TrainReport, train, evaluate, tune_self_link_threshold
from .synth import gen_synth, gen_synth_corpus, log_to_text, write_synth
