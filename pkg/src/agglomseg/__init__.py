"""Context-aware delayed agglomerative segmentation of over-segmented volumes."""

from .agglomerate import (AgglomConfig, MergeStep, MergeTrace, agglomerate,
                          agglomerate_delayed, agglomerate_standard, read_trace_csv)
from .context import (ContextConfig, PipelineResult, agglomerate_mito, mito_confidence,
                      overlap_ratio, partition_superpixels, run_context_pipeline)
from .evaluate import contingency, evaluate, split_re, split_vi
from .features import (MomentHistogram, accumulate, edge_features, hist_stats, merge_hist,
                       quartile)
from .predictor import (Forest, SingleClassError, assign_gt_labels, forest_confidence,
                        iterative_train, load_forest, mean_boundary_confidence, predict,
                        save_forest, train_forest)
from .rag import ProbabilityStack, RegionGraph, build_rag, merge_regions, neighbors
from .synth import SynthParams, synth_generate
from .volumeio import VolumeFormatError, read_volume, write_volume
from .watershed import watershed

__version__ = "0.1.0"
