//! Constant-velocity Kalman filter over box state.
//!
//! State: `[cx, cy, cz, theta, l, w, h, vx, vy, vz]`, one step per LiDAR
//! frame (velocities are metres per frame). Measurement: the first seven
//! components.

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

use crate::classes::ClassGroup;
use crate::geometry::{Box3D, SemanticClass};

pub const STATE_DIM: usize = 10;
pub const MEAS_DIM: usize = 7;

/// Posterior box extents never drop below this floor (metres).
pub const MIN_DIMENSION: f64 = 0.01;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type MeasurementVector = SVector<f64, MEAS_DIM>;
pub type MeasurementMatrix = SMatrix<f64, MEAS_DIM, MEAS_DIM>;
pub type ObservationMatrix = SMatrix<f64, MEAS_DIM, STATE_DIM>;

const CZ: usize = 2;
const H: usize = 6;
const DIMS: [usize; 3] = [4, 5, 6];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
    #[error("innovation covariance is numerically singular")]
    SingularInnovation,
    #[error("unknown class group '{0}'")]
    UnknownGroup(String),
}

/// Filter state: mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub x: StateVector,
    pub p: StateMatrix,
}

impl KalmanState {
    /// Box described by the position/extent part of the state.
    pub fn to_box(&self, score: f64, class_id: SemanticClass) -> Box3D {
        let x = &self.x;
        Box3D {
            cx: x[0],
            cy: x[1],
            cz: x[2],
            theta: x[3],
            l: x[4],
            w: x[5],
            h: x[6],
            score,
            class_id,
        }
    }

    pub fn velocity(&self) -> [f64; 3] {
        [self.x[7], self.x[8], self.x[9]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub z: MeasurementVector,
}

impl Measurement {
    pub fn from_box(b: &Box3D) -> Self {
        Measurement {
            z: MeasurementVector::from_column_slice(&[b.cx, b.cy, b.cz, b.theta, b.l, b.w, b.h]),
        }
    }

    pub fn to_box(&self, score: f64, class_id: SemanticClass) -> Box3D {
        let z = &self.z;
        Box3D {
            cx: z[0],
            cy: z[1],
            cz: z[2],
            theta: z[3],
            l: z[4],
            w: z[5],
            h: z[6],
            score,
            class_id,
        }
    }
}

/// Additive bias corrections applied to raw measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZOffset {
    pub cz: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanParams {
    pub transition: StateMatrix,
    pub observation: ObservationMatrix,
    pub process_noise: StateMatrix,
    pub measurement_noise: MeasurementMatrix,
    pub initial_covariance: StateMatrix,
    pub z_offset: ZOffset,
}

/// Identity with unit position/velocity coupling.
pub fn transition_matrix() -> StateMatrix {
    let mut f = StateMatrix::identity();
    for k in 0..3 {
        f[(k, 7 + k)] = 1.0;
    }
    f
}

/// Selects the first seven state components.
pub fn observation_matrix() -> ObservationMatrix {
    ObservationMatrix::identity()
}

/// Tuned parameter set for a class group.
///
/// Orientation is deweighted through `R = 1e4` and velocities start with
/// variance `1e4`. Groups differ only in `Q` on the extents and in the
/// z offsets.
pub fn params_for_group(group: ClassGroup) -> KalmanParams {
    let p0 = [10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4];
    let r = [0.1, 0.1, 0.1, 1e4, 0.1, 0.1, 0.1];
    let (q, z_offset) = match group {
        ClassGroup::Vehicles => (
            [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.3, 0.01, 0.01, 0.01],
            ZOffset { cz: 0.05, h: -0.1 },
        ),
        ClassGroup::Bikes => (
            [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.3, 0.01, 0.01, 0.01],
            ZOffset { cz: -0.025, h: 0.0625 },
        ),
        ClassGroup::Pedestrian => (
            [0.0, 0.0, 0.0, 1.0, 0.4, 0.4, 0.4, 0.01, 0.01, 0.01],
            ZOffset { cz: 0.028125, h: -0.1 },
        ),
    };
    KalmanParams {
        transition: transition_matrix(),
        observation: observation_matrix(),
        process_noise: StateMatrix::from_diagonal(&StateVector::from_column_slice(&q)),
        measurement_noise: MeasurementMatrix::from_diagonal(&MeasurementVector::from_column_slice(&r)),
        initial_covariance: StateMatrix::from_diagonal(&StateVector::from_column_slice(&p0)),
        z_offset,
    }
}

/// Parameter lookup by group name, as written in config files.
pub fn params_for_group_name(name: &str) -> Result<KalmanParams, MotionError> {
    name.parse::<ClassGroup>()
        .map(params_for_group)
        .map_err(|_| MotionError::UnknownGroup(name.to_string()))
}

/// Start a filter at the detection with zero velocity.
pub fn init(detection: &Box3D, params: &KalmanParams) -> KalmanState {
    let mut x = StateVector::zeros();
    x.fixed_rows_mut::<MEAS_DIM>(0)
        .copy_from(&Measurement::from_box(detection).z);
    KalmanState {
        x,
        p: params.initial_covariance,
    }
}

pub fn predict(state: &KalmanState, params: &KalmanParams) -> KalmanState {
    let f = &params.transition;
    KalmanState {
        x: f * state.x,
        p: f * state.p * f.transpose() + params.process_noise,
    }
}

pub fn update(
    state: &KalmanState,
    measurement: &Measurement,
    params: &KalmanParams,
) -> Result<KalmanState, MotionError> {
    let h = &params.observation;
    let innovation = measurement.z - h * state.x;
    let s = h * state.p * h.transpose() + params.measurement_noise;
    let s_inv = s
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(MotionError::SingularInnovation)?;
    let gain = state.p * h.transpose() * s_inv;
    let mut x = state.x + gain * innovation;
    let p = (StateMatrix::identity() - gain * h) * state.p;
    let p = (p + p.transpose()) * 0.5;
    for k in DIMS {
        x[k] = x[k].max(MIN_DIMENSION);
    }
    Ok(KalmanState { x, p })
}

/// Apply the group's bias corrections to `cz` and `h`.
pub fn apply_offsets(z: &Measurement, params: &KalmanParams) -> Result<Measurement, MotionError> {
    let mut out = *z;
    out.z[CZ] += params.z_offset.cz;
    out.z[H] += params.z_offset.h;
    if out.z[H] <= 0.0 {
        return Err(MotionError::InvalidMeasurement(format!(
            "height {} becomes {} after offset correction",
            z.z[H], out.z[H]
        )));
    }
    Ok(out)
}
