//! The `cone` subcommand: walls, per-class verdicts and the face poset.

use std::collections::BTreeMap;
use std::path::Path;

use hymwall::cone::{build_cones, classify, face_of, graded_refines, Face, StabilityCone, ThetaClass, Verdict};
use hymwall::Rat;
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scenario::{Scenario, Q};
use crate::{write_json, CliError};

/// One wall of the cone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallRecord {
    /// Exact coefficients of `l_S(θ) = μ(E/S) − μ(S)`.
    pub coeffs: Vec<Q>,
    /// Coefficients scaled to a primitive integer vector.
    pub primitive: Vec<String>,
    pub source_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub zero: bool,
}

/// Verdict of one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub theta: Vec<Q>,
    pub verdict: String,
    /// Vanishing walls of a semistable class, violated walls of an unstable
    /// one, empty for a stable class.
    pub active_walls: Vec<usize>,
}

/// A face met by the classified classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceRecord {
    pub active: Vec<usize>,
    pub dim: usize,
    /// Indices into `classifications` of the classes on this face.
    pub members: Vec<usize>,
}

/// Contents of `cone.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeReport {
    pub ambient_dim: usize,
    pub total: crate::scenario::CandidateSpec,
    pub region: Vec<Vec<Q>>,
    pub walls: Vec<WallRecord>,
    pub empty_stable: bool,
    /// The stable cone inside the region as strict inequalities.
    pub stable_region: Vec<String>,
    pub classifications: Vec<Classification>,
    pub faces: Vec<FaceRecord>,
    /// Pairs `(i, j)` of faces with face `i` contained in face `j`.
    pub refinement: Vec<[usize; 2]>,
}

fn primitive(coeffs: &[Rat]) -> Vec<BigInt> {
    let lcm = coeffs.iter().fold(BigInt::one(), |acc, c| acc.lcm(c.denom()));
    let ints: Vec<BigInt> = coeffs.iter().map(|c| (c * Rat::from_integer(lcm.clone())).to_integer()).collect();
    let gcd = ints.iter().fold(BigInt::zero(), |acc, x| acc.gcd(x));
    if gcd.is_zero() {
        return ints;
    }
    ints.into_iter().map(|x| x / &gcd).collect()
}

fn inequality(coeffs: &[BigInt]) -> String {
    let mut out = String::new();
    for (k, c) in coeffs.iter().enumerate() {
        if c.is_zero() {
            continue;
        }
        let mag = c.abs();
        let term = if mag.is_one() { format!("t{}", k + 1) } else { format!("{mag} t{}", k + 1) };
        match (out.is_empty(), c.is_negative()) {
            (true, false) => out.push_str(&term),
            (true, true) => out.push_str(&format!("-{term}")),
            (false, false) => out.push_str(&format!(" + {term}")),
            (false, true) => out.push_str(&format!(" - {term}")),
        }
    }
    format!("{out} > 0")
}

/// Random class of the region as a convex combination of its vertices.
fn random_theta(cone: &StabilityCone<Rat>, rng: &mut ChaCha8Rng) -> ThetaClass<Rat> {
    let verts = &cone.region.vertices;
    let weights: Vec<i64> = (0..verts.len()).map(|_| rng.gen_range(0..=6)).collect();
    let sum: i64 = weights.iter().sum();
    if sum == 0 {
        return verts[0].clone();
    }
    let mut coords = vec![Rat::zero(); cone.region.ambient_dim()];
    for (v, &w) in verts.iter().zip(weights.iter()) {
        let lam = Rat::new(w.into(), sum.into());
        for (c, x) in coords.iter_mut().zip(v.coords.iter()) {
            *c += &lam * x;
        }
    }
    ThetaClass::new(coords)
}

/// Builds the cone of the scenario and classifies its classes. Writes
/// `cone.json` into `out` when given.
pub fn run_cone(scenario: &Scenario, out: Option<&Path>) -> Result<ConeReport, CliError> {
    let input = scenario.cone_input()?;
    let cone = build_cones(&input.total, &input.candidates, &input.region).map_err(|e| CliError::Config(e.to_string()))?;
    let walls: Vec<WallRecord> = cone
        .walls
        .iter()
        .map(|w| {
            let spec = &scenario.candidates[w.source_index];
            WallRecord {
                coeffs: w.coeffs.iter().cloned().map(Q).collect(),
                primitive: primitive(&w.coeffs).iter().map(BigInt::to_string).collect(),
                source_index: w.source_index,
                components: spec.components.clone(),
                label: spec.label.clone(),
                zero: w.is_zero(),
            }
        })
        .collect();
    let stable_region = if cone.empty_stable {
        Vec::new()
    } else {
        cone.walls.iter().map(|w| inequality(&primitive(&w.coeffs))).collect()
    };

    let mut thetas = input.thetas.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    thetas.extend((0..scenario.random_thetas).map(|_| random_theta(&cone, &mut rng)));
    let mut classifications = Vec::with_capacity(thetas.len());
    let mut faces: BTreeMap<Vec<usize>, FaceRecord> = BTreeMap::new();
    for (i, theta) in thetas.iter().enumerate() {
        let verdict = classify(theta, &cone).map_err(|e| CliError::Config(format!("thetas[{i}]: {e}")))?;
        let active_walls = match &verdict {
            Verdict::Stable => Vec::new(),
            Verdict::Semistable { active } => active.clone(),
            Verdict::Unstable { violated } => violated.clone(),
        };
        if !matches!(verdict, Verdict::Unstable { .. }) {
            let Face { active, dim } = face_of(theta, &cone).map_err(|e| CliError::Config(format!("thetas[{i}]: {e}")))?;
            faces.entry(active.clone()).or_insert_with(|| FaceRecord { active, dim, members: Vec::new() }).members.push(i);
        }
        classifications.push(Classification {
            theta: theta.coords.iter().cloned().map(Q).collect(),
            verdict: verdict.kind().to_string(),
            active_walls,
        });
    }
    let faces: Vec<FaceRecord> = faces.into_values().collect();
    let as_face = |f: &FaceRecord| Face { active: f.active.clone(), dim: f.dim };
    let mut refinement = Vec::new();
    for (i, fi) in faces.iter().enumerate() {
        for (j, fj) in faces.iter().enumerate() {
            if i != j && graded_refines(&as_face(fi), &as_face(fj)) {
                refinement.push([i, j]);
            }
        }
    }
    let report = ConeReport {
        ambient_dim: scenario.ambient_dim,
        total: scenario.total.clone(),
        region: scenario.region.vertices.clone(),
        walls,
        empty_stable: cone.empty_stable,
        stable_region,
        classifications,
        faces,
        refinement,
    };
    if let Some(dir) = out {
        write_json(&dir.join("cone.json"), &report)?;
    }
    Ok(report)
}
