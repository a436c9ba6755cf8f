"""BEV neighbor-voting toolkit for monocular pseudo-LiDAR detection pipelines."""

from .bev_grid import GridConfig, PillarGrid, cell_index, feature_coords, voxelize
from .errors import (
    DomainError,
    FormatError,
    GenerationError,
    MonovoteError,
    ParseError,
    ValidationError,
)
from .evaluation import (
    EvalConfig,
    EvalReport,
    OrientedBox,
    assign_difficulty,
    average_precision,
    distance_bucket_eval,
    evaluate_frames,
    nms,
    rotated_iou,
    tp_fp_counts,
)
from .kitti_io import (
    Box2D,
    CameraIntrinsics,
    DepthMap,
    Detection,
    GroundTruthObject,
    load_depth_map,
    parse_boxes2d,
    parse_calib,
    parse_detections,
    parse_labels,
    write_detections,
)
from .neighbor_vote import (
    NeighborDistanceMap,
    ObjectSet,
    VoteParams,
    VoterGrid,
    VoteTally,
    compute_vote_targets,
    decode_vote,
    filter_by_votes,
    read_distance_map,
    tally_votes,
    vote_support_stats,
    write_distance_map,
)
from .numeric_kernels import (
    FusionInputs,
    LossWeights,
    attention_context,
    attention_weights,
    focal_loss,
    fuse_scores,
    smooth_l1,
    total_loss,
)
from .pointcloud import PointCloud, PseudoPoint, read_point_cloud, write_point_cloud
from .projection import (
    associate_roi_scores,
    backproject,
    crop_range,
    downsample,
    project_to_pixel,
)
from .scene_sim import (
    NoiseConfig,
    SceneConfig,
    apply_pseudolidar_noise,
    generate_scene,
    run_voting_experiment,
    simulate_detections,
)

__version__ = "0.1.0"
