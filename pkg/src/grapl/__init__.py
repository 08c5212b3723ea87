"""Zero-shot single-image segmentation.

A small patch classifier is trained on the patches of one image against
pseudo-labels that a Potts-model graph cut refines between training
iterations; the trained classifier then segments the full image in a single
convolutional pass. No pretraining, no annotations.
"""

from .imagegrid import (Image, PatchGrid, SegmentationMap, extract_patch_grid,
                        load_image, save_label_png, upsample_nearest)
from .initializers import (PatchLabeling, SlicParams, SoftPatchLabels,
                           init_patchwise_random, init_seedwise_random,
                           init_slic_soft, init_spatial_kmeans, slic_segment)
from .maxflow import BACKEND as MAXFLOW_BACKEND
from .maxflow import max_flow
from .mrf import (AffinityMetric, PairwiseGraph, UnaryCosts, alpha_expansion,
                  build_pairwise_graph, compute_affinities, compute_sigma,
                  energy, load_gple, unary_costs)
from .net import (AdamState, NetworkParams, adam_step, forward_full,
                  forward_patches, init_params, loss_and_gradients)
from .trainer import GraplConfig, TrainHistory, distinct_labels, run_grapl
from .infer_eval import (EvalReport, Matching, evaluate_dataset,
                         hungarian_match, miou, pixel_accuracy, segment)

__version__ = "0.1.0"
