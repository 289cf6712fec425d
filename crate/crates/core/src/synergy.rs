//! Dose-response modeling (Hill curves) and the four drug-synergy scores
//! — ZIP, Bliss, Loewe, HSA — plus the combination filter used for
//! dataset curation and the pLDDT structure filter.
//!
//! Effects are fractions in [0, 1]. Every score is `measured − null`:
//! Bliss' null is independence 1−(1−E_A)(1−E_B), HSA's is max(E_A, E_B),
//! Loewe's is the dose-additive effect solving x_A/X_A(E) + x_B/X_B(E) = 1,
//! and ZIP compares fitted average responses to independence.

use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SynergyError {
    #[error("effect out of [0,1]: {0}")]
    RangeError(f64),
    #[error("dose-response fit failed: {0}")]
    FitError(String),
    #[error("table parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoseResponsePoint {
    pub dose: f64,
    pub effect: f64,
}

/// E(d) = E_max · dⁿ / (EC50ⁿ + dⁿ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HillCurve {
    pub e_max: f64,
    pub ec50: f64,
    pub slope: f64,
}

impl HillCurve {
    pub fn eval(&self, dose: f64) -> f64 {
        if dose <= 0.0 {
            return 0.0;
        }
        let dn = dose.powf(self.slope);
        self.e_max * dn / (self.ec50.powf(self.slope) + dn)
    }

    /// Dose producing effect e: X(E) = EC50 · (E/(E_max−E))^(1/n).
    /// None outside (0, E_max).
    pub fn invert(&self, e: f64) -> Option<f64> {
        if e <= 0.0 || e >= self.e_max {
            return None;
        }
        Some(self.ec50 * (e / (self.e_max - e)).powf(1.0 / self.slope))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynergyScores {
    pub zip: f64,
    pub bliss: f64,
    pub loewe: f64,
    pub hsa: f64,
}

fn check_effect(e: f64) -> Result<f64, SynergyError> {
    if !(0.0..=1.0).contains(&e) {
        return Err(SynergyError::RangeError(e));
    }
    Ok(e)
}

/// E_AB − (1 − (1−E_A)(1−E_B)).
pub fn bliss(e_ab: f64, e_a: f64, e_b: f64) -> Result<f64, SynergyError> {
    for e in [e_ab, e_a, e_b] {
        check_effect(e)?;
    }
    Ok(e_ab - (1.0 - (1.0 - e_a) * (1.0 - e_b)))
}

/// E_AB − max(E_A, E_B).
pub fn hsa(e_ab: f64, e_a: f64, e_b: f64) -> Result<f64, SynergyError> {
    for e in [e_ab, e_a, e_b] {
        check_effect(e)?;
    }
    Ok(e_ab - e_a.max(e_b))
}

/// ZIP at one dose pair, on fitted average responses:
/// Ē_AB − (Ē_A + Ē_B − Ē_A·Ē_B).
pub fn zip_pointwise(e_ab_fit: f64, e_a_fit: f64, e_b_fit: f64) -> f64 {
    e_ab_fit - (e_a_fit + e_b_fit - e_a_fit * e_b_fit)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoeweResult {
    pub score: f64,
    pub e_loewe: f64,
    /// The additivity equation had no root in (0, min E_max); E_Loewe was
    /// clamped to the nearer boundary.
    pub no_root: bool,
}

/// Solves x_A/X_A(E) + x_B/X_B(E) = 1 for the dose-additive effect by
/// bisection (tolerance 1e-9 on E, 200 iterations) and returns
/// E_AB − E_Loewe.
pub fn loewe(
    e_ab: f64,
    x_a: f64,
    x_b: f64,
    curve_a: &HillCurve,
    curve_b: &HillCurve,
) -> Result<LoeweResult, SynergyError> {
    check_effect(e_ab)?;
    let e_hi = curve_a.e_max.min(curve_b.e_max);
    // x/X(E) with X the Hill inverse; 0 when x = 0, +∞ as E → E_max side.
    let f = |e: f64| -> f64 {
        let term = |x: f64, c: &HillCurve| {
            if x <= 0.0 {
                0.0
            } else {
                match c.invert(e) {
                    Some(dose) => x / dose,
                    // e ≥ this curve's E_max: unreachable dose, term → 0.
                    None => 0.0,
                }
            }
        };
        term(x_a, curve_a) + term(x_b, curve_b) - 1.0
    };
    if x_a <= 0.0 && x_b <= 0.0 {
        return Ok(LoeweResult {
            score: e_ab,
            e_loewe: 0.0,
            no_root: true,
        });
    }
    let eps = 1e-12;
    let mut lo = e_hi * eps;
    let mut hi = e_hi * (1.0 - eps);
    // f decreases in E (X grows with E). No sign change → clamp and flag.
    if f(hi) > 0.0 {
        return Ok(LoeweResult {
            score: e_ab - e_hi,
            e_loewe: e_hi,
            no_root: true,
        });
    }
    if f(lo) < 0.0 {
        return Ok(LoeweResult {
            score: e_ab,
            e_loewe: 0.0,
            no_root: true,
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-9 {
            break;
        }
    }
    let e_loewe = 0.5 * (lo + hi);
    Ok(LoeweResult {
        score: e_ab - e_loewe,
        e_loewe,
        no_root: false,
    })
}

/// Least-squares Hill fit: coarse (EC50 log-grid × slope grid) search with
/// the closed-form optimal E_max per candidate, then multiplicative
/// coordinate descent. Residual (RMS) above 0.2 is a FitError.
pub fn hill_fit(points: &[DoseResponsePoint]) -> Result<HillCurve, SynergyError> {
    let pts: Vec<DoseResponsePoint> = points.iter().copied().filter(|p| p.dose > 0.0).collect();
    for p in &pts {
        check_effect(p.effect).map_err(|_| SynergyError::FitError(format!("effect {} out of range", p.effect)))?;
    }
    let mut doses: Vec<f64> = pts.iter().map(|p| p.dose).collect();
    doses.sort_by(|a, b| a.partial_cmp(b).unwrap());
    doses.dedup();
    if doses.len() < 3 {
        return Err(SynergyError::FitError(format!(
            "need ≥ 3 distinct positive doses, got {}",
            doses.len()
        )));
    }

    // Optimal E_max for fixed (EC50, n): E(d) = E_max·w(d) is linear in
    // E_max, so E_max* = Σ w·y / Σ w², clamped to (0, 1].
    let sse = |ec50: f64, n: f64| -> (f64, f64) {
        let mut num = 0.0;
        let mut den = 0.0;
        for p in &pts {
            let dn = p.dose.powf(n);
            let w = dn / (ec50.powf(n) + dn);
            num += w * p.effect;
            den += w * w;
        }
        let e_max = if den > 0.0 { (num / den).clamp(1e-9, 1.0) } else { 1e-9 };
        let err: f64 = pts
            .iter()
            .map(|p| {
                let dn = p.dose.powf(n);
                let pred = e_max * dn / (ec50.powf(n) + dn);
                (pred - p.effect).powi(2)
            })
            .sum();
        (err, e_max)
    };

    let (dmin, dmax) = (doses[0], doses[doses.len() - 1]);
    let (mut best_ec50, mut best_n, mut best_err) = (dmin, 1.0, f64::INFINITY);
    let grid_n = 40;
    for i in 0..grid_n {
        let frac = i as f64 / (grid_n - 1) as f64;
        let ec50 = (dmin / 10.0) * (100.0 * dmax / dmin).powf(frac);
        for j in 0..20 {
            let n = 0.25 * (16.0f64).powf(j as f64 / 19.0);
            let (err, _) = sse(ec50, n);
            if err < best_err {
                best_err = err;
                best_ec50 = ec50;
                best_n = n;
            }
        }
    }

    let mut factor = 1.3_f64;
    while factor > 1.0 + 1e-10 {
        let mut improved = false;
        for _ in 0..4 {
            for (de, dn) in [(factor, 1.0), (1.0 / factor, 1.0), (1.0, factor), (1.0, 1.0 / factor)] {
                let (ec50, n) = (best_ec50 * de, best_n * dn);
                let (err, _) = sse(ec50, n);
                if err < best_err {
                    best_err = err;
                    best_ec50 = ec50;
                    best_n = n;
                    improved = true;
                }
            }
        }
        if !improved {
            factor = factor.sqrt();
        }
    }

    let (_, e_max) = sse(best_ec50, best_n);
    let residual = (best_err / pts.len() as f64).sqrt();
    if residual > 0.2 {
        return Err(SynergyError::FitError(format!(
            "residual {residual:.3} exceeds 0.2"
        )));
    }
    Ok(HillCurve {
        e_max,
        ec50: best_ec50,
        slope: best_n,
    })
}

/// All dose-response data for one (drug pair, cell line).
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationRecord {
    pub drug_a: String,
    pub drug_b: String,
    pub cell_line: String,
    pub mono_a: Vec<DoseResponsePoint>,
    pub mono_b: Vec<DoseResponsePoint>,
    /// (dose_a, dose_b, measured E_AB), both doses > 0.
    pub combo: Vec<(f64, f64, f64)>,
}

/// Fitted surface Ē_AB: each grid slice (fixed dose of one drug) is
/// refit as a Hill curve of the varying drug on the residual scale
/// y' = (y − E₀)/(1 − E₀), E₀ = fitted monotherapy effect of the fixed
/// drug; predictions from both slice directions are averaged per cell.
/// Slices with too few doses fall back to the measured values.
fn zip_surface(
    rec: &CombinationRecord,
    curve_a: &HillCurve,
    curve_b: &HillCurve,
) -> Result<Vec<f64>, SynergyError> {
    let n = rec.combo.len();
    let mut fitted = vec![(0.0, 0usize); n];

    let mut directions: [(bool, &HillCurve); 2] = [(true, curve_b), (false, curve_a)];
    for (vary_a, fixed_curve) in directions.iter_mut() {
        // Group cells by the fixed dose.
        let mut slices: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, (da, db, _)) in rec.combo.iter().enumerate() {
            let fixed = if *vary_a { *db } else { *da };
            slices.entry(fixed.to_bits()).or_default().push(i);
        }
        for idxs in slices.values() {
            let fixed_dose = if *vary_a {
                rec.combo[idxs[0]].1
            } else {
                rec.combo[idxs[0]].0
            };
            let e0 = fixed_curve.eval(fixed_dose);
            let pts: Vec<DoseResponsePoint> = idxs
                .iter()
                .map(|&i| {
                    let (da, db, y) = rec.combo[i];
                    DoseResponsePoint {
                        dose: if *vary_a { da } else { db },
                        effect: (((y - e0) / (1.0 - e0).max(1e-9)).clamp(0.0, 1.0)),
                    }
                })
                .collect();
            let mut distinct: Vec<f64> = pts.iter().map(|p| p.dose).collect();
            distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
            distinct.dedup();
            if distinct.len() >= 3 {
                let curve = hill_fit(&pts)?;
                for (&i, p) in idxs.iter().zip(&pts) {
                    let pred = e0 + (1.0 - e0) * curve.eval(p.dose);
                    fitted[i].0 += pred;
                    fitted[i].1 += 1;
                }
            } else {
                for &i in idxs {
                    fitted[i].0 += rec.combo[i].2;
                    fitted[i].1 += 1;
                }
            }
        }
    }
    Ok(fitted
        .into_iter()
        .map(|(sum, cnt)| sum / cnt as f64)
        .collect())
}

/// Mean ZIP score over the combination grid of one record.
pub fn zip_from_record(rec: &CombinationRecord) -> Result<f64, SynergyError> {
    let curve_a = hill_fit(&rec.mono_a)?;
    let curve_b = hill_fit(&rec.mono_b)?;
    let surface = zip_surface(rec, &curve_a, &curve_b)?;
    let mut total = 0.0;
    for ((da, db, _), e_ab_fit) in rec.combo.iter().zip(&surface) {
        total += zip_pointwise(*e_ab_fit, curve_a.eval(*da), curve_b.eval(*db));
    }
    Ok(total / rec.combo.len() as f64)
}

/// All four scores for one record, each averaged over the combination
/// grid. Bliss/Loewe/HSA use fitted monotherapy effects at the cell's
/// doses.
pub fn scores_for_record(rec: &CombinationRecord) -> Result<SynergyScores, SynergyError> {
    if rec.combo.is_empty() {
        return Err(SynergyError::FitError("empty combination grid".into()));
    }
    let curve_a = hill_fit(&rec.mono_a)?;
    let curve_b = hill_fit(&rec.mono_b)?;
    let n = rec.combo.len() as f64;
    let (mut b_sum, mut h_sum, mut l_sum) = (0.0, 0.0, 0.0);
    for (da, db, e_ab) in &rec.combo {
        let e_a = curve_a.eval(*da);
        let e_b = curve_b.eval(*db);
        let e_ab = e_ab.clamp(0.0, 1.0);
        b_sum += bliss(e_ab, e_a, e_b)?;
        h_sum += hsa(e_ab, e_a, e_b)?;
        l_sum += loewe(e_ab, *da, *db, &curve_a, &curve_b)?.score;
    }
    Ok(SynergyScores {
        zip: zip_from_record(rec)?,
        bliss: b_sum / n,
        loewe: l_sum / n,
        hsa: h_sum / n,
    })
}

/// True iff some cell line has all four scores strictly positive.
pub fn is_synergistic(per_cell_line: &[SynergyScores]) -> bool {
    per_cell_line
        .iter()
        .any(|s| s.zip > 0.0 && s.bliss > 0.0 && s.loewe > 0.0 && s.hsa > 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureEntry {
    pub id: String,
    /// None for experimental structures.
    pub plddt: Option<f64>,
    pub experimental: bool,
}

/// Drops predicted structures with pLDDT < 70 (inclusive threshold);
/// experimental entries always pass.
pub fn filter_structures(entries: &[StructureEntry]) -> Vec<StructureEntry> {
    entries
        .iter()
        .filter(|e| e.experimental || e.plddt.map_or(false, |p| p >= 70.0))
        .cloned()
        .collect()
}

/// Parses the combination table: header with columns drug_a, drug_b,
/// cell_line, dose_a, dose_b, effect (comma-, tab- or space-delimited);
/// monotherapy rows carry one zero dose. Rows are grouped into one
/// record per (drug_a, drug_b, cell_line).
pub fn parse_combination_table(input: &str) -> Result<Vec<CombinationRecord>, SynergyError> {
    let split = |l: &str| -> Vec<String> {
        l.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.to_string())
            .collect()
    };
    let mut lines = input
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines
        .next()
        .ok_or_else(|| SynergyError::Parse {
            line: 1,
            reason: "empty table".into(),
        })
        .map(|(i, l)| (i, split(l)))?;
    let col = |name: &str| -> Result<usize, SynergyError> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SynergyError::Parse {
                line: hline + 1,
                reason: format!("missing column '{name}'"),
            })
    };
    let (ca, cb, cl, cda, cdb, ce) = (
        col("drug_a")?,
        col("drug_b")?,
        col("cell_line")?,
        col("dose_a")?,
        col("dose_b")?,
        col("effect")?,
    );
    let mut map: BTreeMap<(String, String, String), CombinationRecord> = BTreeMap::new();
    for (i, line) in lines {
        let toks = split(line);
        if toks.len() != header.len() {
            return Err(SynergyError::Parse {
                line: i + 1,
                reason: format!("expected {} fields, got {}", header.len(), toks.len()),
            });
        }
        let num = |j: usize| -> Result<f64, SynergyError> {
            toks[j].parse().map_err(|_| SynergyError::Parse {
                line: i + 1,
                reason: format!("bad number '{}'", toks[j]),
            })
        };
        let (da, db, e) = (num(cda)?, num(cdb)?, num(ce)?);
        if !(0.0..=1.0).contains(&e) {
            return Err(SynergyError::Parse {
                line: i + 1,
                reason: format!("effect {e} out of [0,1]"),
            });
        }
        let key = (toks[ca].clone(), toks[cb].clone(), toks[cl].clone());
        let rec = map.entry(key.clone()).or_insert_with(|| CombinationRecord {
            drug_a: key.0,
            drug_b: key.1,
            cell_line: key.2,
            mono_a: Vec::new(),
            mono_b: Vec::new(),
            combo: Vec::new(),
        });
        match (da > 0.0, db > 0.0) {
            (true, false) => rec.mono_a.push(DoseResponsePoint { dose: da, effect: e }),
            (false, true) => rec.mono_b.push(DoseResponsePoint { dose: db, effect: e }),
            (true, true) => rec.combo.push((da, db, e)),
            (false, false) => {} // untreated control row
        }
    }
    Ok(map.into_values().collect())
}

/// Scores per drug pair across its cell lines, plus the synergy verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSynergy {
    pub drug_a: String,
    pub drug_b: String,
    pub per_cell: Vec<(String, SynergyScores)>,
    pub synergistic: bool,
}

pub fn evaluate_table(records: &[CombinationRecord]) -> Result<Vec<PairSynergy>, SynergyError> {
    let mut pairs: BTreeMap<(String, String), Vec<(String, SynergyScores)>> = BTreeMap::new();
    for rec in records {
        let scores = scores_for_record(rec)?;
        pairs
            .entry((rec.drug_a.clone(), rec.drug_b.clone()))
            .or_default()
            .push((rec.cell_line.clone(), scores));
    }
    Ok(pairs
        .into_iter()
        .map(|((drug_a, drug_b), per_cell)| {
            let synergistic = is_synergistic(&per_cell.iter().map(|(_, s)| *s).collect::<Vec<_>>());
            PairSynergy {
                drug_a,
                drug_b,
                per_cell,
                synergistic,
            }
        })
        .collect())
}

/// One line per synergistic pair and cell line, stable column order.
pub fn manifest(pairs: &[PairSynergy]) -> String {
    let mut out = String::from("drug_a\tdrug_b\tcell_line\tzip\tbliss\tloewe\thsa\n");
    for p in pairs.iter().filter(|p| p.synergistic) {
        for (cell, s) in &p.per_cell {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                p.drug_a, p.drug_b, cell, s.zip, s.bliss, s.loewe, s.hsa
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bliss_and_hsa_hand_cases() {
        assert!((bliss(0.9, 0.5, 0.5).unwrap() - 0.15).abs() < 1e-15);
        assert!(bliss(0.3, 0.3, 0.0).unwrap().abs() < 1e-15);
        assert_eq!(bliss(0.0, 0.0, 0.0).unwrap(), 0.0);
        assert!(bliss(1.2, 0.1, 0.1).is_err());

        assert!((hsa(0.9, 0.5, 0.4).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(hsa(0.5, 0.5, 0.3).unwrap(), 0.0);
        assert!((hsa(0.2, 0.5, 0.4).unwrap() + 0.3).abs() < 1e-15);

        // Null-model antisymmetry on random triples.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (ea, eb) = (rng.gen::<f64>(), rng.gen::<f64>());
            let null_b = 1.0 - (1.0 - ea) * (1.0 - eb);
            let d = rng.gen::<f64>() * null_b.min(1.0 - null_b);
            let s1 = bliss(null_b + d, ea, eb).unwrap();
            let s2 = bliss(null_b - d, ea, eb).unwrap();
            assert!((s1 + s2).abs() < 1e-12);
            let null_h = ea.max(eb);
            let d = rng.gen::<f64>() * null_h.min(1.0 - null_h);
            let s1 = hsa(null_h + d, ea, eb).unwrap();
            let s2 = hsa(null_h - d, ea, eb).unwrap();
            assert!((s1 + s2).abs() < 1e-12);
        }
    }

    #[test]
    fn zip_pointwise_hand_case() {
        assert!((zip_pointwise(0.9, 0.5, 0.5) - 0.15).abs() < 1e-15);
        assert_eq!(zip_pointwise(0.3, 0.3, 0.0), 0.0);
    }

    #[test]
    fn hill_eval_invert() {
        let c = HillCurve { e_max: 1.0, ec50: 1.0, slope: 1.0 };
        assert!((c.eval(1.0) - 0.5).abs() < 1e-15);
        assert_eq!(c.eval(0.0), 0.0);
        assert!((c.invert(2.0 / 3.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(c.invert(0.0).is_none());
        assert!(c.invert(1.0).is_none());
        // Round trip.
        let c = HillCurve { e_max: 0.8, ec50: 3.5, slope: 1.7 };
        for d in [0.5, 1.0, 2.0, 7.0] {
            assert!((c.invert(c.eval(d)).unwrap() - d).abs() < 1e-9);
        }
    }

    #[test]
    fn loewe_closed_form_and_limits() {
        let c = HillCurve { e_max: 1.0, ec50: 1.0, slope: 1.0 };
        // 1/X + 1/X = 1 → X = 2 → E = 2/3.
        let r = loewe(2.0 / 3.0, 1.0, 1.0, &c, &c).unwrap();
        assert!(!r.no_root);
        assert!((r.e_loewe - 2.0 / 3.0).abs() < 1e-7);
        assert!(r.score.abs() < 1e-6);

        // Single-agent limit: x_b = 0 → E_Loewe = E_A(x_A).
        let r = loewe(0.9, 3.0, 0.0, &c, &c).unwrap();
        assert!((r.e_loewe - c.eval(3.0)).abs() < 1e-7);
        assert!((r.score - (0.9 - c.eval(3.0))).abs() < 1e-6);

        // Low-ceiling curves with huge doses: no root, clamp to E_hi.
        let ca = HillCurve { e_max: 0.4, ec50: 1.0, slope: 1.0 };
        let cb = HillCurve { e_max: 0.3, ec50: 1.0, slope: 1.0 };
        let r = loewe(0.35, 1e6, 1e6, &ca, &cb).unwrap();
        assert!(r.no_root);
        assert!((r.e_loewe - 0.3).abs() < 1e-12);

        // Zero doses: clamp to 0.
        let r = loewe(0.1, 0.0, 0.0, &ca, &cb).unwrap();
        assert!(r.no_root && r.e_loewe == 0.0);
    }

    #[test]
    fn loewe_sham_combination_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let c = HillCurve {
                e_max: 0.5 + 0.5 * rng.gen::<f64>(),
                ec50: 0.1 * 10f64.powf(rng.gen::<f64>() * 2.0),
                slope: 0.5 + 2.0 * rng.gen::<f64>(),
            };
            let d = c.ec50 * 10f64.powf(rng.gen::<f64>() * 2.0 - 1.0);
            let e_ab = c.eval(2.0 * d);
            let r = loewe(e_ab, d, d, &c, &c).unwrap();
            assert!(r.score.abs() < 1e-5, "sham score {} for {:?}", r.score, c);
        }
    }

    fn grid_points(c: &HillCurve, doses: &[f64]) -> Vec<DoseResponsePoint> {
        doses
            .iter()
            .map(|&d| DoseResponsePoint { dose: d, effect: c.eval(d) })
            .collect()
    }

    const DOSES: [f64; 8] = [0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0];

    #[test]
    fn hill_fit_recovers_and_degenerates() {
        let truth = HillCurve { e_max: 0.85, ec50: 1.7, slope: 1.4 };
        let fit = hill_fit(&grid_points(&truth, &DOSES)).unwrap();
        assert!((fit.e_max - truth.e_max).abs() / truth.e_max < 0.01);
        assert!((fit.ec50 - truth.ec50).abs() / truth.ec50 < 0.01);
        assert!((fit.slope - truth.slope).abs() / truth.slope < 0.01);

        // Noisy monotone data still fits tightly.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noisy: Vec<DoseResponsePoint> = grid_points(&truth, &DOSES)
            .into_iter()
            .map(|p| DoseResponsePoint {
                dose: p.dose,
                effect: (p.effect + 0.02 * (rng.gen::<f64>() * 2.0 - 1.0)).clamp(0.0, 1.0),
            })
            .collect();
        let fit = hill_fit(&noisy).unwrap();
        let resid: f64 = noisy
            .iter()
            .map(|p| (fit.eval(p.dose) - p.effect).powi(2))
            .sum::<f64>()
            / noisy.len() as f64;
        assert!(resid.sqrt() < 0.05);

        // Constant zero → E_max collapses toward 0.
        let flat: Vec<DoseResponsePoint> =
            DOSES.iter().map(|&d| DoseResponsePoint { dose: d, effect: 0.0 }).collect();
        let fit = hill_fit(&flat).unwrap();
        assert!(fit.e_max < 1e-6);

        assert!(hill_fit(&grid_points(&truth, &[1.0, 2.0])).is_err());
    }

    fn independence_record(ca: &HillCurve, cb: &HillCurve) -> CombinationRecord {
        let mut combo = Vec::new();
        for &da in &DOSES {
            for &db in &DOSES {
                let e = 1.0 - (1.0 - ca.eval(da)) * (1.0 - cb.eval(db));
                combo.push((da, db, e));
            }
        }
        CombinationRecord {
            drug_a: "A".into(),
            drug_b: "B".into(),
            cell_line: "L1".into(),
            mono_a: grid_points(ca, &DOSES),
            mono_b: grid_points(cb, &DOSES),
            combo,
        }
    }

    #[test]
    fn zip_near_zero_on_independence_grid() {
        let ca = HillCurve { e_max: 0.9, ec50: 1.0, slope: 1.2 };
        let cb = HillCurve { e_max: 0.7, ec50: 2.5, slope: 0.9 };
        let rec = independence_record(&ca, &cb);
        let z = zip_from_record(&rec).unwrap();
        assert!(z.abs() < 0.02, "zip on independence grid = {z}");
        // Bliss on the same grid is ~0 too (fitted monotherapy ≈ truth).
        let s = scores_for_record(&rec).unwrap();
        assert!(s.bliss.abs() < 0.01);
        // A uniform boost above independence is detected as synergy.
        let mut boosted = rec.clone();
        for c in boosted.combo.iter_mut() {
            c.2 = (c.2 + 0.1).min(1.0);
        }
        let s = scores_for_record(&boosted).unwrap();
        assert!(s.zip > 0.05 && s.bliss > 0.05 && s.hsa > 0.0);
    }

    #[test]
    fn synergy_truth_table() {
        let s = |zip, bliss, loewe, hsa| SynergyScores { zip, bliss, loewe, hsa };
        assert!(is_synergistic(&[s(0.1, 0.1, 0.1, 0.1)]));
        assert!(!is_synergistic(&[
            s(0.1, 0.1, 0.1, -0.1),
            s(-0.1, 0.2, 0.2, 0.2)
        ]));
        assert!(!is_synergistic(&[s(0.0, 0.1, 0.1, 0.1)]));
        assert!(is_synergistic(&[
            s(-1.0, -1.0, -1.0, -1.0),
            s(0.01, 0.01, 0.01, 0.01)
        ]));
    }

    #[test]
    fn structure_filter_thresholds() {
        let e = |id: &str, plddt: Option<f64>, exp: bool| StructureEntry {
            id: id.into(),
            plddt,
            experimental: exp,
        };
        let input = vec![
            e("low", Some(69.9), false),
            e("edge", Some(70.0), false),
            e("high", Some(91.0), false),
            e("xray", None, true),
            e("xray_low", Some(10.0), true),
        ];
        let kept: Vec<String> = filter_structures(&input).into_iter().map(|s| s.id).collect();
        assert_eq!(kept, vec!["edge", "high", "xray", "xray_low"]);
    }

    #[test]
    fn table_parse_and_manifest() {
        let text = "drug_a,drug_b,cell_line,dose_a,dose_b,effect\n\
                    A,B,L1,1.0,0,0.4\n\
                    A,B,L1,0,1.0,0.3\n\
                    A,B,L1,1.0,1.0,0.8\n\
                    A,B,L2,2.0,0,0.5\n";
        let recs = parse_combination_table(text).unwrap();
        assert_eq!(recs.len(), 2);
        let l1 = recs.iter().find(|r| r.cell_line == "L1").unwrap();
        assert_eq!(l1.mono_a, vec![DoseResponsePoint { dose: 1.0, effect: 0.4 }]);
        assert_eq!(l1.mono_b, vec![DoseResponsePoint { dose: 1.0, effect: 0.3 }]);
        assert_eq!(l1.combo, vec![(1.0, 1.0, 0.8)]);

        assert!(parse_combination_table("drug_a,drug_b\nx,y").is_err());
        assert!(parse_combination_table("drug_a,drug_b,cell_line,dose_a,dose_b,effect\nA,B,L,1,1,2.0").is_err());

        let pairs = vec![
            PairSynergy {
                drug_a: "A".into(),
                drug_b: "B".into(),
                per_cell: vec![(
                    "L1".into(),
                    SynergyScores { zip: 0.1, bliss: 0.2, loewe: 0.3, hsa: 0.4 },
                )],
                synergistic: true,
            },
            PairSynergy {
                drug_a: "C".into(),
                drug_b: "D".into(),
                per_cell: vec![(
                    "L1".into(),
                    SynergyScores { zip: -0.1, bliss: 0.2, loewe: 0.3, hsa: 0.4 },
                )],
                synergistic: false,
            },
        ];
        let m = manifest(&pairs);
        assert!(m.contains("A\tB\tL1\t0.100000"));
        assert!(!m.contains("C\tD"));
    }
}
