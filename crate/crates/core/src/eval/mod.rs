//! Reconstruction metrics and report tables.

pub mod caption;
pub mod metrics;
pub mod report;

pub use caption::{bleu, verb_accuracy, Cider, LemmaEmbedder, LexiconTagger, PosTagger, TableEmbedder, VerbScore, WordEmbedder};
pub use metrics::{
    clip_pcc, dice, dice_values, nway_topk, pcc_of_embeddings, psnr, ssim, ClassifierBackend, DiceScore, PccScore,
    PsnrScore, StubClassifier, PSNR_CAP,
};
pub use report::{
    emit_report, evaluate_pair, format_csv, format_table, load_eval_clip, read_report, summarize, write_report,
    EvalBackends, EvalClip, EvalConfig, Excluded, MetricReport, MetricRow, SampleMetrics, METRIC_NAMES,
};
