//! Real trigonometric basis on the d-torus and its exact mode algebra.
//!
//! Basis functions are 1, √2·cos(2πk·r), √2·sin(2πk·r) over canonical wave
//! vectors (first nonzero component positive), orthonormal in L²(dr) with the
//! torus normalized to unit volume. Products and derivatives are carried out
//! symbolically via product-to-sum formulas, so multiplication operators by
//! trigonometric polynomials are assembled exactly.

use std::collections::HashMap;

use crate::model::TrigPoly;

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// One orthonormal mode.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FourierMode {
    Const,
    /// √2 cos(2πk·r), k canonical.
    Cos(Vec<i32>),
    /// √2 sin(2πk·r), k canonical.
    Sin(Vec<i32>),
}

impl FourierMode {
    pub fn wave_vector(&self) -> Option<&[i32]> {
        match self {
            FourierMode::Const => None,
            FourierMode::Cos(k) | FourierMode::Sin(k) => Some(k),
        }
    }
}

/// Canonicalize a raw wave vector: returns None for k = 0, otherwise the
/// representative with positive leading nonzero entry and the sign flip
/// applied (+1 if unchanged, −1 if negated).
pub fn canon(k: &[i32]) -> Option<(Vec<i32>, i32)> {
    let first = k.iter().find(|&&x| x != 0)?;
    if *first > 0 {
        Some((k.to_vec(), 1))
    } else {
        Some((k.iter().map(|&x| -x).collect(), -1))
    }
}

/// The truncated Fourier basis: all canonical k with ‖k‖_∞ ≤ K.
#[derive(Debug, Clone)]
pub struct FourierBasis {
    pub d: usize,
    pub k_max: usize,
    pub modes: Vec<FourierMode>,
    /// canonical k → index of its Cos entry (Sin follows at +1).
    cos_pos: HashMap<Vec<i32>, usize>,
}

impl FourierBasis {
    pub fn new(d: usize, k_max: usize) -> Self {
        let mut modes = vec![FourierMode::Const];
        let mut cos_pos = HashMap::new();
        let mut ks: Vec<Vec<i32>> = Vec::new();
        let kk = k_max as i32;
        let mut cur = vec![-kk; d];
        loop {
            if let Some((ck, _)) = canon(&cur) {
                if ck == cur {
                    ks.push(cur.clone());
                }
            }
            // advance mixed-radix counter over the box
            let mut axis = d;
            loop {
                if axis == 0 {
                    break;
                }
                axis -= 1;
                cur[axis] += 1;
                if cur[axis] <= kk {
                    break;
                }
                cur[axis] = -kk;
                if axis == 0 {
                    break;
                }
            }
            if cur.iter().all(|&x| x == -kk) {
                break;
            }
        }
        ks.sort();
        for k in ks {
            cos_pos.insert(k.clone(), modes.len());
            modes.push(FourierMode::Cos(k.clone()));
            modes.push(FourierMode::Sin(k));
        }
        FourierBasis {
            d,
            k_max,
            modes,
            cos_pos,
        }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn in_box(&self, k: &[i32]) -> bool {
        k.iter().all(|&x| x.unsigned_abs() as usize <= self.k_max)
    }

    /// Index of Cos(k) for canonical k inside the box.
    pub fn cos_index(&self, k: &[i32]) -> Option<usize> {
        self.cos_pos.get(k).copied()
    }

    /// Accumulate the plain term amp·cos(2πk·r) (kind = false) or
    /// amp·sin(2πk·r) (kind = true), k raw, expressed in orthonormal
    /// coordinates. Contributions outside the box are dropped (Galerkin
    /// projection).
    pub fn accumulate_plain(&self, out: &mut Vec<(usize, f64)>, is_sin: bool, k: &[i32], amp: f64) {
        if amp == 0.0 {
            return;
        }
        match canon(k) {
            None => {
                // cos(0) = 1, sin(0) = 0.
                if !is_sin {
                    out.push((0, amp));
                }
            }
            Some((ck, sign)) => {
                if !self.in_box(&ck) {
                    return;
                }
                if let Some(ci) = self.cos_index(&ck) {
                    if is_sin {
                        out.push((ci + 1, amp * f64::from(sign) / SQRT_2));
                    } else {
                        out.push((ci, amp / SQRT_2));
                    }
                }
            }
        }
    }

    /// Orthonormal coefficients of a plain trigonometric polynomial
    /// (exact when all harmonics fit in the box).
    pub fn project_poly(&self, poly: &TrigPoly) -> Vec<f64> {
        let mut coeffs = vec![0.0; self.len()];
        coeffs[0] = poly.constant;
        let mut terms = Vec::new();
        for m in &poly.modes {
            self.accumulate_plain(&mut terms, false, &m.k, m.cos);
            self.accumulate_plain(&mut terms, true, &m.k, m.sin);
        }
        for (i, v) in terms {
            coeffs[i] += v;
        }
        coeffs
    }

    /// Plain trigonometric polynomial from orthonormal coefficients
    /// (inverse of `project_poly` for in-box content).
    pub fn to_trig_poly(&self, coeffs: &[f64]) -> TrigPoly {
        assert_eq!(coeffs.len(), self.len());
        let mut poly = TrigPoly {
            constant: coeffs[0],
            modes: Vec::new(),
        };
        let mut i = 1;
        while i < self.len() {
            let k = self.modes[i].wave_vector().expect("non-constant").to_vec();
            let cos = coeffs[i] * SQRT_2;
            let sin = coeffs[i + 1] * SQRT_2;
            if cos != 0.0 || sin != 0.0 {
                poly.modes.push(crate::model::TrigMode { k, cos, sin });
            }
            i += 2;
        }
        poly
    }

    /// Action of ∂_{r_axis} on mode `idx`: list of (target, coefficient).
    pub fn deriv_action(&self, idx: usize, axis: usize) -> Vec<(usize, f64)> {
        let two_pi = 2.0 * std::f64::consts::PI;
        match &self.modes[idx] {
            FourierMode::Const => Vec::new(),
            FourierMode::Cos(k) => {
                let w = two_pi * f64::from(k[axis]);
                if w == 0.0 {
                    Vec::new()
                } else {
                    // ∂(√2 cos) = −2πk_axis √2 sin
                    let ci = self.cos_index(k).unwrap();
                    vec![(ci + 1, -w)]
                }
            }
            FourierMode::Sin(k) => {
                let w = two_pi * f64::from(k[axis]);
                if w == 0.0 {
                    Vec::new()
                } else {
                    let ci = self.cos_index(k).unwrap();
                    vec![(ci, w)]
                }
            }
        }
    }

    /// Action of multiplication by `poly` on mode `idx`, Galerkin-projected.
    pub fn mult_action(&self, idx: usize, poly: &TrigPoly) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let c0 = poly.constant;
        if c0 != 0.0 {
            out.push((idx, c0));
        }
        match &self.modes[idx] {
            FourierMode::Const => {
                for m in &poly.modes {
                    self.accumulate_plain(&mut out, false, &m.k, m.cos);
                    self.accumulate_plain(&mut out, true, &m.k, m.sin);
                }
            }
            FourierMode::Cos(kb) => {
                // √2 cos(x)·[cos(y), sin(y)] via product-to-sum.
                for m in &poly.modes {
                    let sum = add_k(kb, &m.k);
                    let dif = sub_k(kb, &m.k);
                    if m.cos != 0.0 {
                        let a = m.cos * SQRT_2 / 2.0;
                        self.accumulate_plain(&mut out, false, &dif, a);
                        self.accumulate_plain(&mut out, false, &sum, a);
                    }
                    if m.sin != 0.0 {
                        let a = m.sin * SQRT_2 / 2.0;
                        self.accumulate_plain(&mut out, true, &sum, a);
                        self.accumulate_plain(&mut out, true, &dif, -a);
                    }
                }
            }
            FourierMode::Sin(kb) => {
                for m in &poly.modes {
                    let sum = add_k(kb, &m.k);
                    let dif = sub_k(kb, &m.k);
                    if m.cos != 0.0 {
                        // √2 sin(x)cos(y) = (√2/2)[sin(x+y) + sin(x−y)]
                        let a = m.cos * SQRT_2 / 2.0;
                        self.accumulate_plain(&mut out, true, &sum, a);
                        self.accumulate_plain(&mut out, true, &dif, a);
                    }
                    if m.sin != 0.0 {
                        // √2 sin(x)sin(y) = (√2/2)[cos(x−y) − cos(x+y)]
                        let a = m.sin * SQRT_2 / 2.0;
                        self.accumulate_plain(&mut out, false, &dif, a);
                        self.accumulate_plain(&mut out, false, &sum, -a);
                    }
                }
            }
        }
        out
    }

    /// Evaluate every mode at a torus point; `out` has `len()` entries.
    pub fn eval_modes(&self, r: &[f64], out: &mut [f64]) {
        let two_pi = 2.0 * std::f64::consts::PI;
        for (i, mode) in self.modes.iter().enumerate() {
            out[i] = match mode {
                FourierMode::Const => 1.0,
                FourierMode::Cos(k) => {
                    let phase: f64 = k
                        .iter()
                        .zip(r)
                        .map(|(&ki, &ri)| f64::from(ki) * ri)
                        .sum();
                    SQRT_2 * (two_pi * phase).cos()
                }
                FourierMode::Sin(k) => {
                    let phase: f64 = k
                        .iter()
                        .zip(r)
                        .map(|(&ki, &ri)| f64::from(ki) * ri)
                        .sum();
                    SQRT_2 * (two_pi * phase).sin()
                }
            };
        }
    }
}

fn add_k(a: &[i32], b: &[i32]) -> Vec<i32> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

fn sub_k(a: &[i32], b: &[i32]) -> Vec<i32> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TrigMode;

    #[test]
    fn mode_count_matches_box() {
        // d = 1, K = 2: {1, cos k, sin k for k = 1, 2} → 5.
        assert_eq!(FourierBasis::new(1, 2).len(), 5);
        // d = 2, K = 3: (2K+1)² = 49.
        assert_eq!(FourierBasis::new(2, 3).len(), 49);
    }

    #[test]
    fn modes_are_orthonormal_on_grid() {
        let fb = FourierBasis::new(2, 2);
        let n = 16;
        let mut gram = vec![vec![0.0; fb.len()]; fb.len()];
        let mut vals = vec![0.0; fb.len()];
        for a in 0..n {
            for b in 0..n {
                let r = [a as f64 / n as f64, b as f64 / n as f64];
                fb.eval_modes(&r, &mut vals);
                for i in 0..fb.len() {
                    for j in 0..fb.len() {
                        gram[i][j] += vals[i] * vals[j] / (n * n) as f64;
                    }
                }
            }
        }
        for i in 0..fb.len() {
            for j in 0..fb.len() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (gram[i][j] - expect).abs() < 1e-12,
                    "gram[{i}][{j}] = {}",
                    gram[i][j]
                );
            }
        }
    }

    #[test]
    fn mult_action_matches_collocation() {
        // Multiplication by sin(2πr) + 0.3cos(4πr) checked pointwise.
        let fb = FourierBasis::new(1, 4);
        let poly = TrigPoly {
            constant: 0.2,
            modes: vec![
                TrigMode {
                    k: vec![1],
                    cos: 0.0,
                    sin: 1.0,
                },
                TrigMode {
                    k: vec![2],
                    cos: 0.3,
                    sin: 0.0,
                },
            ],
        };
        let mut vals = vec![0.0; fb.len()];
        for idx in 0..fb.len() {
            // skip basis modes whose product would exit the box
            let kb = fb.modes[idx].wave_vector().map_or(0, |k| k[0].abs());
            if kb + 2 > 4 {
                continue;
            }
            let action = fb.mult_action(idx, &poly);
            for t in 0..64 {
                let r = [t as f64 / 64.0];
                fb.eval_modes(&r, &mut vals);
                let direct = poly.eval(&r) * vals[idx];
                let spectral: f64 = action.iter().map(|&(j, a)| a * vals[j]).sum();
                assert!(
                    (direct - spectral).abs() < 1e-12,
                    "idx {idx} r {r:?}: {direct} vs {spectral}"
                );
            }
        }
    }

    #[test]
    fn deriv_action_matches_finite_difference() {
        let fb = FourierBasis::new(2, 3);
        let h = 1e-6;
        let r = [0.17, 0.43];
        let mut v = vec![0.0; fb.len()];
        let mut vp = vec![0.0; fb.len()];
        let mut vm = vec![0.0; fb.len()];
        fb.eval_modes(&r, &mut v);
        for axis in 0..2 {
            let mut rp = r;
            rp[axis] += h;
            let mut rm = r;
            rm[axis] -= h;
            fb.eval_modes(&rp, &mut vp);
            fb.eval_modes(&rm, &mut vm);
            for idx in 0..fb.len() {
                let fd = (vp[idx] - vm[idx]) / (2.0 * h);
                let spectral: f64 = fb
                    .deriv_action(idx, axis)
                    .iter()
                    .map(|&(j, a)| a * v[j])
                    .sum();
                assert!((fd - spectral).abs() < 1e-5);
            }
        }
    }
}
