//! The canonical 324-feature catalog, vector assembly, imputation and
//! z-score scaling.
//!
//! Catalog layout (group order as extracted):
//!
//! | slots    | group                                   |
//! |----------|-----------------------------------------|
//! | 0..22    | interval features                       |
//! | 22..32   | energy features                         |
//! | 32..114  | frequency spectrum (S1/S2/Sys/Dia)      |
//! | 114..116 | autocorrelation heart rate (m_HR, sd_HR)|
//! | 116..173 | beat-sequence spectra (HR/Sys/Dia)      |
//! | 173..181 | kurtosis                                |
//! | 181..185 | cyclostationarity                       |
//! | 185..267 | power spectral density (S1/S2/Sys/Dia)  |
//! | 267..324 | beat-sequence PSD (HR/Sys/Dia)          |

use crate::features::higher::CycloFeatures;
use crate::features::FeatureError;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;
use thiserror::Error;

pub const FEATURE_COUNT: usize = 324;
pub const CATALOG_VERSION: &str = "1";

/// Group sizes in catalog order.
pub const GROUP_SIZES: [usize; 9] = [22, 10, 82, 2, 57, 8, 4, 82, 57];

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("need at least 2 vectors to fit, got {0}")]
    TooFewVectors(usize),
    #[error("feature table header does not match the catalog: {0}")]
    CatalogMismatch(String),
    #[error("malformed feature table row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn build_catalog() -> Vec<String> {
    let mut names = Vec::with_capacity(FEATURE_COUNT);

    names.extend(
        [
            "m_RR", "sd_RR", "m_IntS1", "sd_IntS1", "m_IntS2", "sd_IntS2", "m_IntSys",
            "sd_IntSys", "m_IntDia", "sd_IntDia", "m_Ratio_SysRR", "sd_Ratio_SysRR",
            "m_Ratio_DiaRR", "sd_Ratio_DiaRR", "m_Ratio_SysDia", "sd_Ratio_SysDia",
            "m_Amp_SysS1", "sd_Amp_SysS1", "m_Amp_DiaS2", "sd_Amp_DiaS2", "m_Ratio_IntS1S2",
            "sd_Ratio_IntS1S2",
        ]
        .iter()
        .map(|s| s.to_string()),
    );

    names.extend(
        [
            "Ratio_energy_HSTotal", "Ratio_magnitude_HSTotal", "Ratio_energy_HSRemain",
            "Ratio_magnitude_HSRemain", "m_Ratio_energy_SysCycle", "sd_Ratio_energy_SysCycle",
            "m_Ratio_energy_DiaCycle", "sd_Ratio_energy_DiaCycle", "m_Ratio_HSCycle",
            "sd_Ratio_HSCycle",
        ]
        .iter()
        .map(|s| s.to_string()),
    );

    let hz = |prefix: &str, grid: &[f64], out: &mut Vec<String>| {
        for f in grid {
            out.push(format!("{prefix}_{}", *f as u64));
        }
    };
    let short = crate::features::spectral::s1_s2_grid_hz();
    let long = crate::features::spectral::sys_dia_grid_hz();
    hz("m_Fre_Spec_S1", &short, &mut names);
    hz("m_Fre_Spec_S2", &short, &mut names);
    hz("m_Fre_Spec_Sys", &long, &mut names);
    hz("m_Fre_Spec_Dia", &long, &mut names);

    names.push("m_HR".into());
    names.push("sd_HR".into());

    let seq_grid = crate::features::sequence::sequence_grid_hz();
    let seq_hz = |prefix: &str, out: &mut Vec<String>| {
        for f in &seq_grid {
            out.push(format!("{prefix}_{f:.2}"));
        }
    };
    seq_hz("spec_HR_seq", &mut names);
    seq_hz("spec_Sys_seq", &mut names);
    seq_hz("spec_Dia_seq", &mut names);

    names.extend(
        [
            "m_S1_kurtosis", "sd_S1_kurtosis", "m_S2_kurtosis", "sd_S2_kurtosis",
            "m_Sys_kurtosis", "sd_Sys_kurtosis", "m_Dia_kurtosis", "sd_Dia_kurtosis",
        ]
        .iter()
        .map(|s| s.to_string()),
    );

    names.extend(
        [
            "m_cyclostationarity_1", "sd_cyclostationarity_1", "m_cyclostationarity_2",
            "sd_cyclostationarity_2",
        ]
        .iter()
        .map(|s| s.to_string()),
    );

    hz("m_Pow_Spec_S1", &short, &mut names);
    hz("m_Pow_Spec_S2", &short, &mut names);
    hz("m_Pow_Spec_Sys", &long, &mut names);
    hz("m_Pow_Spec_Dia", &long, &mut names);

    seq_hz("Pow_spec_HR_seq", &mut names);
    seq_hz("Pow_spec_Sys_seq", &mut names);
    seq_hz("Pow_spec_Dia_seq", &mut names);

    assert_eq!(names.len(), FEATURE_COUNT);
    names
}

/// Canonical feature names, in slot order.
pub fn catalog() -> &'static [String] {
    static CATALOG: OnceLock<Vec<String>> = OnceLock::new();
    CATALOG.get_or_init(build_catalog)
}

/// One recording's 324 features. Slots that could not be computed hold NaN
/// until [`Imputer::apply`] replaces them; `imputed_mask` stays true for
/// those slots either way.
#[derive(Debug, Clone)]
pub struct FeatureVector {
    pub record_id: String,
    pub values: Vec<f64>,
    pub imputed_mask: Vec<bool>,
}

impl FeatureVector {
    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Raw outputs of the feature extractors; a failed extractor contributes its
/// error and the whole group is marked for imputation.
pub struct FeatureParts {
    pub interval: Result<[f64; 22], FeatureError>,
    pub energy: Result<[f64; 10], FeatureError>,
    pub spectrum: Result<[f64; 82], FeatureError>,
    pub heart_rate: Result<(f64, f64), FeatureError>,
    pub sequence: Result<[f64; 114], FeatureError>,
    pub kurtosis: Result<[f64; 8], FeatureError>,
    pub cyclo: Result<CycloFeatures, FeatureError>,
    pub psd: Result<[f64; 82], FeatureError>,
}

/// Place every group in catalog order. Errored groups and non-finite values
/// become NaN with the imputed flag set; the cyclostationarity SDs of a
/// single-subsequence recording keep their pinned 0 but are flagged.
pub fn assemble(record_id: impl Into<String>, parts: FeatureParts) -> FeatureVector {
    let mut values = Vec::with_capacity(FEATURE_COUNT);
    let mut flags = Vec::with_capacity(FEATURE_COUNT);

    let mut push = |vals: &[f64], pre_flags: Option<&[bool]>, values: &mut Vec<f64>, flags: &mut Vec<bool>| {
        for (i, &v) in vals.iter().enumerate() {
            let pre = pre_flags.map_or(false, |f| f[i]);
            values.push(v);
            flags.push(pre || !v.is_finite());
        }
    };
    let mut push_group = |res: Result<Vec<f64>, &FeatureError>,
                          len: usize,
                          values: &mut Vec<f64>,
                          flags: &mut Vec<bool>| match res {
        Ok(vals) => {
            assert_eq!(vals.len(), len);
            push(&vals, None, values, flags);
        }
        Err(_) => {
            values.extend(std::iter::repeat(f64::NAN).take(len));
            flags.extend(std::iter::repeat(true).take(len));
        }
    };

    let (mut v, mut f) = (&mut values, &mut flags);
    push_group(parts.interval.as_ref().map(|a| a.to_vec()), 22, &mut v, &mut f);
    push_group(parts.energy.as_ref().map(|a| a.to_vec()), 10, &mut v, &mut f);
    push_group(parts.spectrum.as_ref().map(|a| a.to_vec()), 82, &mut v, &mut f);
    push_group(
        parts.heart_rate.as_ref().map(|&(m, s)| vec![m, s]),
        2,
        &mut v,
        &mut f,
    );
    // sequence spectra (first 57) go before kurtosis/cyclo, PSD half after
    let seq = parts.sequence.as_ref();
    push_group(seq.map(|a| a[..57].to_vec()), 57, &mut v, &mut f);
    push_group(parts.kurtosis.as_ref().map(|a| a.to_vec()), 8, &mut v, &mut f);
    match &parts.cyclo {
        Ok(c) => {
            let sd_flag = c.single_subsequence;
            push(
                &c.values,
                Some(&[false, sd_flag, false, sd_flag]),
                v,
                f,
            );
        }
        Err(_) => {
            v.extend(std::iter::repeat(f64::NAN).take(4));
            f.extend(std::iter::repeat(true).take(4));
        }
    }
    push_group(parts.psd.as_ref().map(|a| a.to_vec()), 82, &mut v, &mut f);
    push_group(seq.map(|a| a[57..].to_vec()), 57, &mut v, &mut f);

    debug_assert_eq!(values.len(), FEATURE_COUNT);
    FeatureVector {
        record_id: record_id.into(),
        values,
        imputed_mask: flags,
    }
}

/// Per-slot medians of the finite training values, used to fill missing
/// slots. Fit on training data only and persisted with the model.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Imputer {
    pub medians: Vec<f64>,
}

impl Imputer {
    pub fn fit(train: &[FeatureVector]) -> Self {
        let mut medians = vec![0.0; FEATURE_COUNT];
        for (slot, m) in medians.iter_mut().enumerate() {
            let mut column: Vec<f64> = train
                .iter()
                .map(|v| v.values[slot])
                .filter(|v| v.is_finite())
                .collect();
            if column.is_empty() {
                continue; // stays 0.0: nothing informative to impute from
            }
            column.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = column.len();
            *m = if n % 2 == 1 {
                column[n / 2]
            } else {
                0.5 * (column[n / 2 - 1] + column[n / 2])
            };
        }
        Self { medians }
    }

    /// Replace non-finite slots by the stored medians (mask already set by
    /// [`assemble`]).
    pub fn apply(&self, v: &mut FeatureVector) {
        for (slot, value) in v.values.iter_mut().enumerate() {
            if !value.is_finite() {
                *value = self.medians[slot];
                v.imputed_mask[slot] = true;
            }
        }
    }
}

/// Per-slot z-score scaler with the SD floored at 1e-8.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl Scaler {
    /// Fit on (imputed, finite) training vectors; sample SD, n-1 denominator.
    pub fn fit(train: &[FeatureVector]) -> Result<Self, AssemblyError> {
        if train.len() < 2 {
            return Err(AssemblyError::TooFewVectors(train.len()));
        }
        let n = train.len() as f64;
        let mut mean = vec![0.0; FEATURE_COUNT];
        let mut std = vec![0.0; FEATURE_COUNT];
        for slot in 0..FEATURE_COUNT {
            let m = train.iter().map(|v| v.values[slot]).sum::<f64>() / n;
            let var = train
                .iter()
                .map(|v| {
                    let d = v.values[slot] - m;
                    d * d
                })
                .sum::<f64>()
                / (n - 1.0);
            mean[slot] = m;
            std[slot] = var.sqrt().max(STD_FLOOR);
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Feature table CSV
// ---------------------------------------------------------------------------

/// Write the feature table: optional `# ...` comment lines, then a header of
/// `record_id` plus the 324 catalog names, one row per recording. Missing
/// values are rendered as NaN.
pub fn save_feature_table(
    vectors: &[FeatureVector],
    path: impl AsRef<Path>,
    header_comment: Option<&str>,
) -> Result<(), AssemblyError> {
    let mut w = BufWriter::new(File::create(path)?);
    if let Some(c) = header_comment {
        writeln!(w, "# {c}")?;
    }
    write!(w, "record_id")?;
    for name in catalog() {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for v in vectors {
        write!(w, "{}", v.record_id)?;
        for x in &v.values {
            if x.is_finite() {
                // shortest representation that round-trips exactly
                write!(w, ",{x}")?;
            } else {
                write!(w, ",NaN")?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Read a feature table written by [`save_feature_table`], validating the
/// header against the catalog. NaN cells are marked for imputation.
pub fn load_feature_table(path: impl AsRef<Path>) -> Result<Vec<FeatureVector>, AssemblyError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = loop {
        match lines.next() {
            Some(line) => {
                let line = line?;
                if line.starts_with('#') {
                    continue;
                }
                break line;
            }
            None => {
                return Err(AssemblyError::CatalogMismatch("empty file".into()));
            }
        }
    };
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() != FEATURE_COUNT + 1 || cols[0] != "record_id" {
        return Err(AssemblyError::CatalogMismatch(format!(
            "expected record_id + {FEATURE_COUNT} columns, found {}",
            cols.len()
        )));
    }
    for (i, name) in catalog().iter().enumerate() {
        if cols[i + 1] != name {
            return Err(AssemblyError::CatalogMismatch(format!(
                "column {} is {:?}, expected {:?}",
                i + 1,
                cols[i + 1],
                name
            )));
        }
    }

    let mut out = Vec::new();
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',');
        let record_id = fields
            .next()
            .ok_or_else(|| AssemblyError::MalformedRow { row, reason: "empty row".into() })?
            .to_string();
        let mut values = Vec::with_capacity(FEATURE_COUNT);
        for field in fields {
            let v: f64 = field.parse().map_err(|_| AssemblyError::MalformedRow {
                row,
                reason: format!("bad value {field:?}"),
            })?;
            values.push(v);
        }
        if values.len() != FEATURE_COUNT {
            return Err(AssemblyError::MalformedRow {
                row,
                reason: format!("{} values, expected {FEATURE_COUNT}", values.len()),
            });
        }
        let imputed_mask = values.iter().map(|v| !v.is_finite()).collect();
        out.push(FeatureVector { record_id, values, imputed_mask });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ok_parts() -> FeatureParts {
        FeatureParts {
            interval: Ok([0.5; 22]),
            energy: Ok([0.25; 10]),
            spectrum: Ok([1.0; 82]),
            heart_rate: Ok((0.8, 0.01)),
            sequence: Ok([0.1; 114]),
            kurtosis: Ok([1.5; 8]),
            cyclo: Ok(CycloFeatures { values: [0.4, 0.02, 5.0, 0.5], single_subsequence: false }),
            psd: Ok([2.0; 82]),
        }
    }

    #[test]
    fn catalog_has_324_unique_names() {
        let names = catalog();
        assert_eq!(names.len(), FEATURE_COUNT);
        let unique: std::collections::HashSet<&String> = names.iter().collect();
        assert_eq!(unique.len(), FEATURE_COUNT);
        assert_eq!(GROUP_SIZES.iter().sum::<usize>(), FEATURE_COUNT);
    }

    #[test]
    fn catalog_spot_checks() {
        let names = catalog();
        assert_eq!(names[0], "m_RR");
        assert_eq!(names[22], "Ratio_energy_HSTotal");
        assert_eq!(names[32], "m_Fre_Spec_S1_10");
        assert_eq!(names[43], "m_Fre_Spec_S1_120");
        assert_eq!(names[56], "m_Fre_Spec_Sys_10");
        assert_eq!(names[114], "m_HR");
        assert_eq!(names[116], "spec_HR_seq_0.05");
        assert_eq!(names[172], "spec_Dia_seq_1.00");
        assert_eq!(names[173], "m_S1_kurtosis");
        assert_eq!(names[181], "m_cyclostationarity_1");
        assert_eq!(names[185], "m_Pow_Spec_S1_10");
        assert_eq!(names[267], "Pow_spec_HR_seq_0.05");
        assert_eq!(names[323], "Pow_spec_Dia_seq_1.00");
    }

    #[test]
    fn assemble_with_all_parts_has_no_flags() {
        let v = assemble("r1", ok_parts());
        assert_eq!(v.values.len(), FEATURE_COUNT);
        assert!(v.imputed_mask.iter().all(|&f| !f));
        assert!(v.is_finite());
    }

    #[test]
    fn errored_energy_group_flags_its_ten_slots() {
        let mut parts = ok_parts();
        parts.energy = Err(FeatureError::DegenerateEnergy("zero".into()));
        let v = assemble("r1", parts);
        assert!(v.imputed_mask[22..32].iter().all(|&f| f));
        assert!(v.values[22..32].iter().all(|x| x.is_nan()));
        assert!(v.imputed_mask[..22].iter().all(|&f| !f));
        assert!(v.imputed_mask[32..].iter().all(|&f| !f));
    }

    #[test]
    fn single_subsequence_cyclo_sds_flagged_but_zero() {
        let mut parts = ok_parts();
        parts.cyclo = Ok(CycloFeatures { values: [0.4, 0.0, 5.0, 0.0], single_subsequence: true });
        let v = assemble("r1", parts);
        assert_eq!(v.values[182], 0.0);
        assert!(v.imputed_mask[182]);
        assert!(!v.imputed_mask[181]);
    }

    #[test]
    fn assemble_is_deterministic() {
        let a = assemble("r", ok_parts());
        let b = assemble("r", ok_parts());
        assert_eq!(a.values, b.values);
        assert_eq!(a.imputed_mask, b.imputed_mask);
    }

    #[test]
    fn imputer_fills_with_training_median() {
        let mut v1 = assemble("a", ok_parts());
        v1.values[5] = 2.0;
        let mut v2 = assemble("b", ok_parts());
        v2.values[5] = 4.0;
        let mut v3 = assemble("c", ok_parts());
        v3.values[5] = 10.0;
        let imp = Imputer::fit(&[v1, v2, v3]);
        assert_eq!(imp.medians[5], 4.0);

        let mut parts = ok_parts();
        parts.interval = Err(FeatureError::InsufficientBeats { need: 2, found: 1 });
        let mut broken = assemble("d", parts);
        imp.apply(&mut broken);
        assert!(broken.is_finite());
        assert_eq!(broken.values[5], 4.0);
        assert!(broken.imputed_mask[5]);
    }

    #[test]
    fn scaler_two_vector_example() {
        let mut a = assemble("a", ok_parts());
        let mut b = assemble("b", ok_parts());
        a.values = vec![0.0; FEATURE_COUNT];
        b.values = vec![2.0; FEATURE_COUNT];
        let s = Scaler::fit(&[a.clone(), b.clone()]).unwrap();
        assert_relative_eq!(s.mean[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.std[0], std::f64::consts::SQRT_2, epsilon = 1e-12);
        let sa = s.apply(&a.values);
        assert_relative_eq!(sa[0], -1.0 / std::f64::consts::SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn constant_slot_is_floored_and_scales_to_zero() {
        let mut a = assemble("a", ok_parts());
        let mut b = assemble("b", ok_parts());
        a.values = vec![3.0; FEATURE_COUNT];
        b.values = vec![3.0; FEATURE_COUNT];
        let s = Scaler::fit(&[a.clone(), b]).unwrap();
        assert_eq!(s.std[0], STD_FLOOR);
        assert_eq!(s.apply(&a.values)[0], 0.0);
    }

    #[test]
    fn scaled_training_set_has_zero_mean_unit_sd() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let vectors: Vec<FeatureVector> = (0..40)
            .map(|i| {
                let mut v = assemble(format!("r{i}"), ok_parts());
                for x in v.values.iter_mut() {
                    *x = rng.gen_range(-5.0..5.0);
                }
                v
            })
            .collect();
        let s = Scaler::fit(&vectors).unwrap();
        let scaled: Vec<Vec<f64>> = vectors.iter().map(|v| s.apply(&v.values)).collect();
        for slot in 0..FEATURE_COUNT {
            let col: Vec<f64> = scaled.iter().map(|r| r[slot]).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
                / (col.len() - 1) as f64)
                .sqrt();
            assert!(m.abs() < 1e-9, "slot {slot} mean {m}");
            assert!((sd - 1.0).abs() < 1e-9, "slot {slot} sd {sd}");
        }
    }

    #[test]
    fn too_few_vectors_rejected() {
        let v = assemble("a", ok_parts());
        assert!(matches!(Scaler::fit(&[v]), Err(AssemblyError::TooFewVectors(1))));
    }

    #[test]
    fn feature_table_round_trip_preserves_values_and_nans() {
        let mut v1 = assemble("a0001", ok_parts());
        v1.values[7] = 0.1234567890123456789;
        let mut parts = ok_parts();
        parts.heart_rate = Err(FeatureError::NoPeakInRange);
        let v2 = assemble("a0002", parts);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feats.csv");
        save_feature_table(&[v1.clone(), v2.clone()], &path, Some("config: test")).unwrap();
        let back = load_feature_table(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].record_id, "a0001");
        for (x, y) in v1.values.iter().zip(&back[0].values) {
            assert_eq!(x.to_bits(), y.to_bits(), "{x} vs {y}");
        }
        assert!(back[1].values[114].is_nan());
        assert!(back[1].imputed_mask[114]);
    }

    #[test]
    fn feature_table_rejects_wrong_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "record_id,foo,bar\nx,1,2\n").unwrap();
        assert!(matches!(
            load_feature_table(&path),
            Err(AssemblyError::CatalogMismatch(_))
        ));
    }
}
