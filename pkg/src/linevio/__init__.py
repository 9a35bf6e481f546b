"""linevio: sliding-window visual-inertial odometry with point and line features.

Submodules
----------
rotations   quaternion / SO(3) helpers (Hamilton convention, w >= 0)
geometry    camera model, Plucker / orthonormal lines, reprojection residuals
imu         midpoint preintegration, inertial residual
simulator   deterministic synthetic world, trajectories, measurement synthesis
tracker     frame-to-frame point and line tracking on synthetic detections
selection   tracking-sensitivity surfaces, feature culling, residual weighting
estimator   sliding-window nonlinear least squares with marginalization
harness     scenario configs, end-to-end runs, metrics, ablation CLI
"""

__version__ = "0.1.0"
