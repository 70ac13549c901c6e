"""Simulated teleoperation workbench for demonstration-guided 6-DoF grasping."""

from .geometry import (CameraIntrinsics, DepthImage, HandEyeCalibration, Mask,
                       Pose, camera_to_world, mask_centroid, mask_outline,
                       min_area_rect, pixel_to_camera, project)
from .scene import (Gripper, Scene, SceneFrame, SceneObject, Workspace,
                    evaluate_grasp, execute, generate_scene, render,
                    success_rates)
from .grasp import InitialGrasp, KeyPoint, compute_yaw, initial_grasp, select_key_points
from .learner import (EncoderParams, PointCloud, TrainConfig, augment, encode,
                      normalize, nt_xent, similarity, train)
from .demo import (DemonstrationRecord, DemonstrationStore, GraspPlan, Thresholds,
                   final_grasp, pseudo_grasp_poses, record_demo, resample_waypoints,
                   similarity_index)

__version__ = "0.1.0"
