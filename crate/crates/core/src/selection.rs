//! The two selection operators acting on innovations: ellipsoidal gating and
//! nearest-neighbor association, composed as gate-then-NN.

use crate::error::{Error, Result};
use crate::filter::{self, CovFactor, Innovation, StateSpaceModel, TrackState};
use crate::statx::GateSpec;
use crate::Real;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Outcome of testing one innovation against the gate `{Z ≤ τ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateDecision<T> {
    pub accepted: bool,
    pub nis_value: T,
    pub threshold: T,
}

impl<T: Real> GateDecision<T> {
    /// Decision for a precomputed NIS value. NaN is never accepted.
    pub fn from_nis(nis_value: T, spec: &GateSpec<T>) -> Self {
        Self {
            accepted: nis_value <= spec.tau(),
            nis_value,
            threshold: spec.tau(),
        }
    }
}

pub fn gate<T: Real>(inn: &Innovation<T>, spec: &GateSpec<T>) -> Result<GateDecision<T>> {
    if inn.dim() != spec.m().as_usize() {
        return Err(Error::DimensionMismatch {
            context: "gate dimension",
            expected: spec.m().as_usize(),
            found: inn.dim(),
        });
    }
    Ok(GateDecision::from_nis(filter::nis(inn)?, spec))
}

/// In-gate candidates for one track at one step; all share one `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet<T: Real> {
    s_cov: DMatrix<T>,
    innovations: Vec<DVector<T>>,
    nis_values: Vec<T>,
}

impl<T: Real> CandidateSet<T> {
    pub fn new(factor: &CovFactor<T>, innovations: Vec<DVector<T>>) -> Result<Self> {
        let nis_values = innovations
            .iter()
            .map(|nu| factor.nis(nu))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            s_cov: factor.cov().clone(),
            innovations,
            nis_values,
        })
    }

    /// Assembles a set from innovations whose NIS values are already known.
    pub fn from_parts(
        s_cov: DMatrix<T>,
        innovations: Vec<DVector<T>>,
        nis_values: Vec<T>,
    ) -> Result<Self> {
        if innovations.len() != nis_values.len() {
            return Err(Error::DimensionMismatch {
                context: "candidate nis values",
                expected: innovations.len(),
                found: nis_values.len(),
            });
        }
        if let Some(bad) = innovations.iter().find(|nu| nu.len() != s_cov.nrows()) {
            return Err(Error::DimensionMismatch {
                context: "candidate innovation",
                expected: s_cov.nrows(),
                found: bad.len(),
            });
        }
        Ok(Self {
            s_cov,
            innovations,
            nis_values,
        })
    }

    pub fn len(&self) -> usize {
        self.innovations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.innovations.is_empty()
    }

    pub fn s_cov(&self) -> &DMatrix<T> {
        &self.s_cov
    }

    pub fn nis_values(&self) -> &[T] {
        &self.nis_values
    }

    pub fn innovations(&self) -> &[DVector<T>] {
        &self.innovations
    }
}

/// The NN-selected candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Selected<T: Real> {
    /// Index into the candidate list (or measurement list, for [`pipeline`]).
    pub index: usize,
    pub innovation: Innovation<T>,
    pub nis: T,
    /// Number of candidates the minimum was taken over.
    pub multiplicity: usize,
}

/// Index of the smallest value, lowest index on ties; `None` if empty.
fn argmin<T: Real>(values: &[T]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if !(v < values[b]) => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Minimum-NIS candidate; ties go to the lowest index.
pub fn nn_select<T: Real>(cands: &CandidateSet<T>) -> Result<Selected<T>> {
    let index = argmin(&cands.nis_values).ok_or(Error::EmptyCandidates)?;
    Ok(Selected {
        index,
        innovation: Innovation {
            nu: cands.innovations[index].clone(),
            s_cov: cands.s_cov.clone(),
        },
        nis: cands.nis_values[index],
        multiplicity: cands.len(),
    })
}

/// Per-measurement gate decisions plus the NN choice among survivors.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome<T: Real> {
    pub decisions: Vec<GateDecision<T>>,
    pub selected: Option<Selected<T>>,
}

/// Gate every measurement, then NN-select among the survivors.
///
/// `state` must be the predicted state. The returned index refers to `z_list`.
pub fn pipeline<T: Real>(
    z_list: &[DVector<T>],
    state: &TrackState<T>,
    model: &StateSpaceModel<T>,
    spec: &GateSpec<T>,
) -> Result<Option<Selected<T>>> {
    Ok(pipeline_detailed(z_list, state, model, spec)?.selected)
}

pub fn pipeline_detailed<T: Real>(
    z_list: &[DVector<T>],
    state: &TrackState<T>,
    model: &StateSpaceModel<T>,
    spec: &GateSpec<T>,
) -> Result<PipelineOutcome<T>> {
    if model.meas_dim() != spec.m().as_usize() {
        return Err(Error::DimensionMismatch {
            context: "gate dimension",
            expected: spec.m().as_usize(),
            found: model.meas_dim(),
        });
    }
    let Some(first) = z_list.first() else {
        return Ok(PipelineOutcome {
            decisions: Vec::new(),
            selected: None,
        });
    };
    let s_cov = filter::innovation(first, state, model)?.s_cov;
    let factor = CovFactor::new(&s_cov)?;
    let predicted = model.measurement() * &state.mean;

    let mut decisions = Vec::with_capacity(z_list.len());
    let mut survivors = Vec::new();
    let mut survivor_nis = Vec::new();
    let mut survivor_index = Vec::new();
    for (i, z) in z_list.iter().enumerate() {
        if z.len() != model.meas_dim() {
            return Err(Error::DimensionMismatch {
                context: "measurement",
                expected: model.meas_dim(),
                found: z.len(),
            });
        }
        let nu = z - &predicted;
        let decision = GateDecision::from_nis(factor.nis(&nu)?, spec);
        if decision.accepted {
            survivors.push(nu);
            survivor_nis.push(decision.nis_value);
            survivor_index.push(i);
        }
        decisions.push(decision);
    }
    if survivors.is_empty() {
        return Ok(PipelineOutcome {
            decisions,
            selected: None,
        });
    }
    let cands = CandidateSet::from_parts(s_cov, survivors, survivor_nis)?;
    let mut selected = nn_select(&cands)?;
    selected.index = survivor_index[selected.index];
    Ok(PipelineOutcome {
        decisions,
        selected: Some(selected),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statx::Dof;

    fn spec95() -> GateSpec<f64> {
        GateSpec::new(0.95, Dof::new(2).unwrap()).unwrap()
    }

    fn eye_inn(nu: &[f64]) -> Innovation<f64> {
        Innovation::new(
            DVector::from_column_slice(nu),
            DMatrix::identity(nu.len(), nu.len()),
        )
        .unwrap()
    }

    #[test]
    fn gate_examples() {
        let d = gate(&eye_inn(&[0.0, 0.0]), &spec95()).unwrap();
        assert!(d.accepted);
        assert_eq!(d.nis_value, 0.0);

        let d = gate(&eye_inn(&[3.0, 0.0]), &spec95()).unwrap();
        assert!(!d.accepted);
        assert!((d.nis_value - 9.0).abs() < 1e-12);
        assert!((d.threshold - 5.991).abs() < 1e-3);

        assert!(matches!(
            gate(&eye_inn(&[1.0, 0.0, 0.0]), &spec95()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn boundary_is_accepted_and_nan_rejected() {
        let spec = spec95();
        assert!(GateDecision::from_nis(spec.tau(), &spec).accepted);
        assert!(!GateDecision::from_nis(f64::NAN, &spec).accepted);
    }

    fn cands(nis: &[f64]) -> CandidateSet<f64> {
        let nus = nis
            .iter()
            .map(|&z| DVector::from_vec(vec![z.sqrt(), 0.0]))
            .collect();
        CandidateSet::new(&CovFactor::new(&DMatrix::identity(2, 2)).unwrap(), nus).unwrap()
    }

    #[test]
    fn nn_select_examples() {
        let one = nn_select(&cands(&[1.7])).unwrap();
        assert_eq!((one.index, one.multiplicity), (0, 1));

        let three = nn_select(&cands(&[3.1, 0.4, 2.2])).unwrap();
        assert_eq!(three.index, 1);
        assert_eq!(three.multiplicity, 3);
        assert!((three.nis - 0.4).abs() < 1e-12);

        let empty =
            CandidateSet::<f64>::from_parts(DMatrix::identity(2, 2), vec![], vec![]).unwrap();
        assert_eq!(nn_select(&empty), Err(Error::EmptyCandidates));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(nn_select(&cands(&[2.0, 0.5, 0.5, 3.0])).unwrap().index, 1);
    }

    #[test]
    fn from_parts_checks_lengths() {
        let r = CandidateSet::<f64>::from_parts(
            DMatrix::identity(2, 2),
            vec![DVector::zeros(2)],
            vec![],
        );
        assert!(r.is_err());
    }

    fn setup() -> (TrackState<f64>, StateSpaceModel<f64>) {
        let model = StateSpaceModel::constant_velocity_2d(1.0, 0.01, 1.0).unwrap();
        let state = TrackState::new(DVector::zeros(4), DMatrix::identity(4, 4) * 0.5).unwrap();
        (state, model)
    }

    #[test]
    fn pipeline_examples() {
        let (state, model) = setup();
        let spec = spec95();
        assert_eq!(pipeline(&[], &state, &model, &spec).unwrap(), None);

        // S = 0.5 I + I = 1.5 I; (4,4) has Z = 32/1.5, (0.5,0) has Z = 1/6
        let zs = vec![
            DVector::from_vec(vec![4.0, 4.0]),
            DVector::from_vec(vec![0.5, 0.0]),
        ];
        let sel = pipeline(&zs, &state, &model, &spec).unwrap().unwrap();
        assert_eq!(sel.index, 1);
        assert_eq!(sel.multiplicity, 1);
        assert!((sel.nis - 0.25 / 1.5).abs() < 1e-12);

        let out = pipeline_detailed(&zs, &state, &model, &spec).unwrap();
        assert_eq!(
            out.decisions.iter().map(|d| d.accepted).collect::<Vec<_>>(),
            vec![false, true]
        );

        let far = vec![DVector::from_vec(vec![9.0, 9.0])];
        assert_eq!(pipeline(&far, &state, &model, &spec).unwrap(), None);

        let bad = vec![DVector::from_vec(vec![0.0, 0.0, 0.0])];
        assert!(pipeline(&bad, &state, &model, &spec).is_err());
    }

    #[test]
    fn argmin_scale_equivariance() {
        let base = [0.7, 0.2, 1.9, 0.21];
        let pick = nn_select(&cands(&base)).unwrap().index;
        for &c in &[1e-3, 0.5, 2.0, 1e4] {
            let factor = CovFactor::new(&(DMatrix::identity(2, 2) * c)).unwrap();
            let nus = base
                .iter()
                .map(|&z| DVector::from_vec(vec![z.sqrt(), 0.0]))
                .collect();
            let scaled = CandidateSet::new(&factor, nus).unwrap();
            assert_eq!(nn_select(&scaled).unwrap().index, pick);
        }
    }
}
