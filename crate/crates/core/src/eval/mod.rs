//! Automatic metrics: BLEU, classifier transfer accuracy, cluster purity, k-means.

pub mod bleu;
pub mod classifier;
pub mod cluster;
pub mod kmeans;
pub mod report;

pub use bleu::{bleu, sentence_bleu};
pub use classifier::{train_classifier, transfer_accuracy, Classifier, ClassifierConfig};
pub use cluster::{cluster_metrics, ClusterEval, ClusterMapping, TopicScore};
pub use kmeans::{kmeans, KMeansResult};
pub use report::{config_fingerprint, ClassMetric, MetricReport};
