"""selsr: selective image super-resolution toolchain.

Pipeline: over-segment a low-resolution image, decide figure vs ground per
segment by grouped multitask lasso over pre-trained coupled fg/bg patch
dictionaries, refine the boundary with closed-form matting, super-resolve
only the object region, and optionally stylize the background.
"""

from .dictlearn import (CoupledDictionary, DictionaryStats, TrainingConfig,
                        dictionary_stats, load_dictionary, save_dictionary,
                        train_coupled_dictionary)
from .effects import compose, emboss_background, object_popup, zoom_blur
from .errors import (ConstraintError, FormatError, SamplingError, SelsrError,
                     TrainingError)
from .gmtl import (CoefficientMatrix, FigureGroundMap, GmtlConfig, GroupIndex,
                   PatchConfig, TaskBatch, classify_segment, gmtl_solve,
                   lasso_vote_baseline, project_l12_ball,
                   separate_figure_ground)
from .imagecore import (PatchGrid, RasterImage, downsample, extract_features,
                        load_image, make_grid, sample_training_patches,
                        save_image, upsample_bicubic)
from .matting import (AlphaMatte, MattingParams, Trimap, matting_laplacian,
                      solve_matte, trimap_from_map)
from .segmentation import (SegmentationParams, SegmentMap, oversegment,
                           segment_adjacency)
from .sparse import SparseCode, lasso, soft_threshold
from .superres import SrConfig, psnr, super_resolve_region

__version__ = "0.1.0"
