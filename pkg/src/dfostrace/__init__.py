"""Vehicle tracking, lane-change detection and abnormality alerts on fiber-sensing waterfalls."""

from .waterfall import SensorGeometry, Waterfall, load_waterfall, save_waterfall
from .simulator import GroundTruth, Lane, SceneSpec, VehicleClass, VehicleSpec, render_scene
from .tracker import TrackerConfig, TrackStatus, VehicleTrack, track_vehicle
from .lanes import CentroidThreshold, LaneChangeEvent, calibrate_threshold, detect_lane_changes, spectral_centroid
from .abnormality import AbnormalityAlert, HistogramConfig, aggregate, detect_hotspots
from .evaluation import MetricsReport, lane_change_metrics, tracking_accuracy

__version__ = "0.1.0"
