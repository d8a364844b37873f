"""Object-swap augmentation of robot demonstrations with voxel radiance fields."""
from .field import VoxelRadianceField, load_field, save_field
from .geometry import PinholeCamera, Se3Pose, camera_to_object_at
from .pipeline import AugmentConfig, NoiseConfig, Trajectory, augment_trajectory, read_trajectory, write_trajectory
from .render import RenderConfig, render_image
from .train import TrainConfig, train_field

__version__ = "0.1.0"
