//! Detection-based stealthiness evaluation: spectral features, a
//! polynomial-kernel SVM detector under stratified cross-validation, and
//! query-count statistics.

mod features;
mod metrics;
mod svm;

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::AttackOutcome;
use crate::stats;

pub use features::{band_index, spectral_features, SpectralFeatureVector, Standardizer, DEFAULT_BANDS, FEATURE_RECIPE};
pub use metrics::{roc_auc, CvReport, FoldMetrics, MeanStd};
pub use svm::{PolyKernel, PolySvm, SmoParams};

pub const DETECTOR_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum P2Error {
    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("scores contain NaN")]
    NonFinite,
    #[error("both classes must be present")]
    SingleClass,
    #[error("need at least {needed} samples per class, got {benign} benign and {adversarial} adversarial")]
    TooFewSamples {
        needed: usize,
        benign: usize,
        adversarial: usize,
    },
    #[error("feature rows have inconsistent lengths")]
    RaggedFeatures,
    #[error("invalid detector parameters: {0}")]
    InvalidParams(String),
    #[error("no outcomes to summarize")]
    Empty,
    #[error("features file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    pub degree: u32,
    pub c: f64,
    /// Defaults to `1 / feature_count`.
    pub gamma: Option<f64>,
    pub coef0: f64,
    pub folds: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            degree: 3,
            c: 1.0,
            gamma: None,
            coef0: 1.0,
            folds: 5,
            tolerance: 1e-3,
            seed: 0,
        }
    }
}

impl DetectorParams {
    fn validate(&self) -> Result<(), P2Error> {
        let bad = |m: &str| Err(P2Error::InvalidParams(m.into()));
        if self.degree == 0 {
            return bad("degree must be >= 1");
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad("C must be positive");
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad("gamma must be positive");
            }
        }
        if self.folds < 2 {
            return bad("need at least 2 folds");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        Ok(())
    }

    fn kernel(&self, dim: usize) -> PolyKernel {
        PolyKernel {
            degree: self.degree,
            gamma: self.gamma.unwrap_or(1.0 / dim.max(1) as f64),
            coef0: self.coef0,
        }
    }
}

/// Standardization plus SVM; positive decision values mean "adversarial".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub version: u32,
    pub recipe: String,
    pub c: f64,
    pub standardizer: Standardizer,
    pub svm: PolySvm,
}

impl DetectorModel {
    pub fn fit(rows: &[&[f64]], labels: &[bool], params: &DetectorParams) -> Self {
        let standardizer = Standardizer::fit(rows);
        let x: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.transform(r)).collect();
        let dim = rows.first().map_or(0, |r| r.len());
        let smo = SmoParams {
            c: params.c,
            tolerance: params.tolerance,
            ..SmoParams::default()
        };
        Self {
            version: DETECTOR_FORMAT_VERSION,
            recipe: FEATURE_RECIPE.to_string(),
            c: params.c,
            standardizer,
            svm: PolySvm::train(&x, labels, params.kernel(dim), &smo),
        }
    }

    pub fn decision_value(&self, features: &[f64]) -> f64 {
        self.svm.decision_value(&self.standardizer.transform(features))
    }

    pub fn is_adversarial(&self, features: &[f64]) -> bool {
        self.decision_value(features) > 0.0
    }

    pub fn to_json(&self) -> Result<String, P2Error> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, P2Error> {
        let model: Self = serde_json::from_str(s)?;
        if model.version != DETECTOR_FORMAT_VERSION {
            return Err(P2Error::Format(format!("unsupported detector version {}", model.version)));
        }
        Ok(model)
    }
}

/// Fold assignment that keeps class proportions: each class is shuffled with
/// the seed and dealt round-robin.
pub fn stratified_folds(labels: &[bool], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            assignment[i] = pos % folds;
        }
    }
    assignment
}

/// Cross-validates, then fits the returned model on all samples.
/// Adversarial samples form the positive class.
pub fn train_detector(
    benign: &[SpectralFeatureVector],
    adversarial: &[SpectralFeatureVector],
    params: &DetectorParams,
) -> Result<(DetectorModel, CvReport), P2Error> {
    params.validate()?;
    if benign.len() < params.folds || adversarial.len() < params.folds {
        return Err(P2Error::TooFewSamples {
            needed: params.folds,
            benign: benign.len(),
            adversarial: adversarial.len(),
        });
    }
    let rows: Vec<&[f64]> = benign.iter().chain(adversarial).map(|f| f.as_slice()).collect();
    let dim = rows[0].len();
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(P2Error::RaggedFeatures);
    }
    if rows.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(P2Error::NonFinite);
    }
    let labels: Vec<bool> = (0..rows.len()).map(|i| i >= benign.len()).collect();
    let assignment = stratified_folds(&labels, params.folds, params.seed);

    let mut fold_metrics = Vec::with_capacity(params.folds);
    for fold in 0..params.folds {
        let (mut train_x, mut train_y, mut test_x, mut test_y) = (vec![], vec![], vec![], vec![]);
        for (i, &row) in rows.iter().enumerate() {
            if assignment[i] == fold {
                test_x.push(row);
                test_y.push(labels[i]);
            } else {
                train_x.push(row);
                train_y.push(labels[i]);
            }
        }
        let model = DetectorModel::fit(&train_x, &train_y, params);
        let scores: Vec<f64> = test_x.iter().map(|r| model.decision_value(r)).collect();
        fold_metrics.push(FoldMetrics::from_scores(&scores, &test_y)?);
    }
    let model = DetectorModel::fit(&rows, &labels, params);
    Ok((model, CvReport::from_folds(fold_metrics)))
}

/// Query-count summary over successful runs; failures are only counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryStats {
    pub median: Option<f64>,
    pub iqr: Option<f64>,
    pub successes: usize,
    pub failures: usize,
}

pub fn query_stats(outcomes: &[AttackOutcome]) -> Result<QueryStats, P2Error> {
    if outcomes.is_empty() {
        return Err(P2Error::Empty);
    }
    let counts: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.success)
        .map(|o| o.queries.total_queries as f64)
        .collect();
    Ok(QueryStats {
        median: stats::median(&counts),
        iqr: stats::iqr(&counts),
        successes: counts.len(),
        failures: outcomes.len() - counts.len(),
    })
}

/// One labelled row of a features file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub adversarial: bool,
    pub features: SpectralFeatureVector,
}

/// Writes `# recipe=<recipe>,bands=<B>` then a CSV table
/// `id,class,band0..band{B-1}`. Values use round-trip float formatting.
pub fn write_features_csv<W: Write>(mut out: W, rows: &[FeatureRow], bands: usize) -> Result<(), P2Error> {
    writeln!(out, "# recipe={FEATURE_RECIPE},bands={bands}")?;
    write!(out, "id,class")?;
    for b in 0..bands {
        write!(out, ",band{b}")?;
    }
    writeln!(out)?;
    for row in rows {
        if row.features.len() != bands {
            return Err(P2Error::RaggedFeatures);
        }
        if row.id.contains([',', '\n', '"']) {
            return Err(P2Error::Format(format!("id {:?} needs quoting", row.id)));
        }
        write!(out, "{},{}", row.id, if row.adversarial { "adversarial" } else { "benign" })?;
        for v in row.features.as_slice() {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads a file produced by [`write_features_csv`], rejecting other recipes.
pub fn read_features_csv<R: BufRead>(input: R) -> Result<(Vec<FeatureRow>, usize), P2Error> {
    let mut lines = input.lines();
    let fmt = |m: String| P2Error::Format(m);
    let header = lines.next().ok_or_else(|| fmt("empty file".into()))??;
    let meta = header
        .strip_prefix("# recipe=")
        .ok_or_else(|| fmt("missing recipe header".into()))?;
    let (recipe, bands) = meta
        .rsplit_once(",bands=")
        .ok_or_else(|| fmt("missing band count".into()))?;
    if recipe != FEATURE_RECIPE {
        return Err(fmt(format!("recipe {recipe:?} does not match {FEATURE_RECIPE:?}")));
    }
    let bands: usize = bands.parse().map_err(|_| fmt(format!("bad band count {bands:?}")))?;
    lines.next().ok_or_else(|| fmt("missing column header".into()))??;
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let id = cells.next().unwrap_or_default().to_string();
        let adversarial = match cells.next() {
            Some("adversarial") => true,
            Some("benign") => false,
            other => return Err(fmt(format!("row {}: bad class {other:?}", n + 1))),
        };
        let features = cells
            .map(|c| c.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| fmt(format!("row {}: {e}", n + 1)))?;
        if features.len() != bands {
            return Err(P2Error::RaggedFeatures);
        }
        rows.push(FeatureRow {
            id,
            adversarial,
            features: SpectralFeatureVector(features),
        });
    }
    Ok((rows, bands))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::AttackOutcome;
    use crate::oracle::QueryLedger;
    use crate::tensorops::ImageTensor;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, dim: usize, centre: f64, seed: u64) -> Vec<SpectralFeatureVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| SpectralFeatureVector((0..dim).map(|_| centre + normal.sample(&mut rng)).collect()))
            .collect()
    }

    #[test]
    fn separated_blobs_are_detected() {
        let (_, report) = train_detector(&blobs(60, 8, 0.0, 1), &blobs(60, 8, 4.0, 2), &DetectorParams::default()).unwrap();
        assert!(report.roc_auc.mean >= 0.99, "{:?}", report.roc_auc);
        assert_eq!(report.folds.len(), 5);
    }

    #[test]
    fn identical_distributions_give_chance_auc() {
        let (_, report) = train_detector(&blobs(150, 8, 0.0, 3), &blobs(150, 8, 0.0, 4), &DetectorParams::default()).unwrap();
        assert!((report.roc_auc.mean - 0.5).abs() <= 0.1, "{:?}", report.roc_auc);
    }

    #[test]
    fn metrics_stay_in_unit_interval() {
        let (_, report) = train_detector(&blobs(20, 4, 0.0, 5), &blobs(20, 4, 0.5, 6), &DetectorParams::default()).unwrap();
        for f in &report.folds {
            for v in [f.accuracy, f.precision, f.recall, f.f1, f.roc_auc] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let err = train_detector(&blobs(4, 3, 0.0, 1), &blobs(10, 3, 1.0, 2), &DetectorParams::default());
        assert!(matches!(err, Err(P2Error::TooFewSamples { .. })));
    }

    #[test]
    fn stratification_balances_classes() {
        let labels: Vec<bool> = (0..70).map(|i| i < 10).collect();
        let a = stratified_folds(&labels, 5, 9);
        for fold in 0..5 {
            let pos = (0..70).filter(|&i| a[i] == fold && labels[i]).count();
            let neg = (0..70).filter(|&i| a[i] == fold && !labels[i]).count();
            assert_eq!((pos, neg), (2, 12));
        }
        assert_eq!(a, stratified_folds(&labels, 5, 9));
    }

    #[test]
    fn predictions_do_not_depend_on_sample_order() {
        let benign = blobs(40, 4, 0.0, 11);
        let adv = blobs(40, 4, 1.5, 12);
        let mut rows: Vec<&[f64]> = benign.iter().chain(&adv).map(|f| f.as_slice()).collect();
        let mut labels: Vec<bool> = (0..80).map(|i| i >= 40).collect();
        let params = DetectorParams::default();
        let a = DetectorModel::fit(&rows, &labels, &params);
        rows.reverse();
        labels.reverse();
        let b = DetectorModel::fit(&rows, &labels, &params);
        let probes = blobs(50, 4, 0.75, 13);
        for p in &probes {
            let (da, db) = (a.decision_value(p.as_slice()), b.decision_value(p.as_slice()));
            // Both runs stop within the KKT tolerance of the same optimum.
            assert!((da - db).abs() < 0.05, "{da} vs {db}");
            if da.abs() > 0.05 {
                assert_eq!(da > 0.0, db > 0.0);
            }
        }
    }

    #[test]
    fn detector_json_round_trips() {
        let (model, _) = train_detector(&blobs(10, 3, 0.0, 1), &blobs(10, 3, 3.0, 2), &DetectorParams::default()).unwrap();
        let back = DetectorModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        let mut v: serde_json::Value = serde_json::from_str(&model.to_json().unwrap()).unwrap();
        v["version"] = 99.into();
        assert!(DetectorModel::from_json(&v.to_string()).is_err());
    }

    fn outcome(queries: u64, success: bool) -> AttackOutcome {
        AttackOutcome {
            attack: "x".into(),
            success,
            adversarial_image: ImageTensor::filled(1, 1, 0.5).unwrap(),
            final_fitness: 0.0,
            queries: QueryLedger {
                total_queries: queries,
                per_phase: Default::default(),
            },
            fitness_trace: vec![],
            iterations_used: 0,
            trace: vec![],
        }
    }

    #[test]
    fn query_stats_examples() {
        let s = query_stats(&[outcome(10, true), outcome(20, true), outcome(30, true)]).unwrap();
        assert_eq!((s.median, s.iqr, s.failures), (Some(20.0), Some(10.0), 0));
        let s = query_stats(&[outcome(10, false), outcome(20, false)]).unwrap();
        assert_eq!((s.median, s.iqr, s.failures), (None, None, 2));
        let s = query_stats(&[outcome(10, true), outcome(99, false)]).unwrap();
        assert_eq!((s.median, s.successes, s.failures), (Some(10.0), 1, 1));
        assert!(matches!(query_stats(&[]), Err(P2Error::Empty)));
    }

    #[test]
    fn features_csv_round_trips() {
        let rows = vec![
            FeatureRow {
                id: "img0000".into(),
                adversarial: false,
                features: SpectralFeatureVector(vec![0.1, 1.0 / 3.0, -2.5]),
            },
            FeatureRow {
                id: "img0001".into(),
                adversarial: true,
                features: SpectralFeatureVector(vec![1e-12, 0.0, 7.0]),
            },
        ];
        let mut buf = Vec::new();
        write_features_csv(&mut buf, &rows, 3).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&format!("# recipe={FEATURE_RECIPE},bands=3\nid,class,band0,band1,band2\n")));
        let (back, bands) = read_features_csv(&buf[..]).unwrap();
        assert_eq!((back, bands), (rows, 3));
        let foreign = text.replace("/v1", "/v2");
        assert!(read_features_csv(foreign.as_bytes()).is_err());
    }
}
