"""Resolution-retaining KD-tree sub-sampling of point clouds for segmentation."""
from ._threads import apply_thread_cap
from .core import ClassMap, FeatureSchema, PointCloud, SubSample, SubSampleSet, check_partition, validate_cloud
from .sampling import KdssConfig, merge, roundtrip_check, subsample

__version__ = "0.1.0"

apply_thread_cap()
