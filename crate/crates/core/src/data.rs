//! Records, datasets, CSV ingestion and seeded train/calibration/test splits.
//!
//! A [`Dataset`] is immutable once built. Calibration code never looks at
//! features directly; it works on [`Observation`]s, which pair each label with
//! the lower/median/upper quantile predictions of some [`BandPredictor`].

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense sensitive-attribute group index in `0..S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub usize);

impl GroupId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Display names for the groups of one sensitive attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSet {
    names: Vec<String>,
}

impl GroupSet {
    /// Groups named `g0`, `g1`, ...
    pub fn anonymous(count: usize) -> Result<Self> {
        Self::named((0..count).map(|g| format!("g{g}")).collect())
    }

    pub fn named(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one group is required".into(),
            ));
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, group: GroupId) -> Option<&str> {
        self.names.get(group.0).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Reads a `group,name` sidecar file.
    pub fn read_sidecar<R: Read>(reader: R, count: usize) -> Result<Self> {
        let mut names: Vec<Option<String>> = vec![None; count];
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let id: usize =
                rec.get(0)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse {
                        row: row + 1,
                        message: "bad group id".into(),
                    })?;
            let name = rec.get(1).unwrap_or_default().to_string();
            let slot = names.get_mut(id).ok_or(Error::UnknownGroup {
                row: row + 1,
                group: id,
                declared: count,
            })?;
            *slot = Some(name);
        }
        Self::named(
            names
                .into_iter()
                .enumerate()
                .map(|(g, n)| n.unwrap_or_else(|| format!("g{g}")))
                .collect(),
        )
    }

    pub fn write_sidecar<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["group", "name"])?;
        for (g, name) in self.names.iter().enumerate() {
            wtr.write_record([g.to_string(), name.clone()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Closed label interval `[min, max]` on the questionnaire scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelDomain {
    pub min: f64,
    pub max: f64,
}

impl LabelDomain {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(Error::InvalidConfig(format!(
                "label domain [{min}, {max}] must be finite with min < max"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.min && y <= self.max
    }

    pub fn clamp(&self, y: f64) -> f64 {
        y.clamp(self.min, self.max)
    }

    pub fn check(&self, y: f64) -> Result<()> {
        if self.contains(y) {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                value: y,
                min: self.min,
                max: self.max,
            })
        }
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

/// Lower, median and upper quantile predictions for one record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub mid: f64,
    pub hi: f64,
}

impl Band {
    /// Builds a band, sorting the three values so crossing quantiles are
    /// rearranged into `lo <= mid <= hi`.
    pub fn rearranged(a: f64, b: f64, c: f64) -> Result<Self> {
        let mut v = [a, b, c];
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("quantile band {v:?}")));
        }
        v.sort_by(f64::total_cmp);
        Ok(Self {
            lo: v[0],
            mid: v[1],
            hi: v[2],
        })
    }

    /// Band from externally supplied lower/upper predictions. The median is
    /// taken as the midpoint.
    pub fn from_bounds(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::NonFinite(format!("quantile bounds ({lo}, {hi})")));
        }
        if lo > hi {
            return Err(Error::InvertedBand { lo, hi });
        }
        Ok(Self {
            lo,
            mid: 0.5 * (lo + hi),
            hi,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub y: f64,
    pub group: GroupId,
    pub features: Vec<f64>,
    pub band: Option<Band>,
}

/// A label paired with its quantile band; the unit calibration works on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub y: f64,
    pub group: GroupId,
    pub band: Band,
}

/// Anything that can produce a quantile band for a record.
pub trait BandPredictor {
    fn band(&self, record: &Record) -> Result<Band>;
}

/// Uses the `q_lo`/`q_hi` columns stored on the records themselves.
#[derive(Debug, Clone, Copy, Default)]
pub struct StoredBands;

impl BandPredictor for StoredBands {
    fn band(&self, record: &Record) -> Result<Band> {
        record
            .band
            .ok_or_else(|| Error::MissingBand(record.id.clone()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<Record>,
    domain: LabelDomain,
    groups: GroupSet,
    feature_dim: usize,
}

impl Dataset {
    /// Validates labels, group ids and feature widths. Group presence is not
    /// checked here because split parts may legitimately miss a group; see
    /// [`Dataset::require_all_groups`].
    pub fn new(records: Vec<Record>, domain: LabelDomain, groups: GroupSet) -> Result<Self> {
        let feature_dim = records.first().map_or(0, |r| r.features.len());
        for (row, r) in records.iter().enumerate() {
            if !r.y.is_finite() {
                return Err(Error::Parse {
                    row: row + 1,
                    message: format!("label {} is not finite", r.y),
                });
            }
            domain.check(r.y)?;
            if r.group.0 >= groups.len() {
                return Err(Error::UnknownGroup {
                    row: row + 1,
                    group: r.group.0,
                    declared: groups.len(),
                });
            }
            if r.features.len() != feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: feature_dim,
                    got: r.features.len(),
                });
            }
            if r.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::Parse {
                    row: row + 1,
                    message: "non-finite feature".into(),
                });
            }
        }
        Ok(Self {
            records,
            domain,
            groups,
            feature_dim,
        })
    }

    pub fn require_all_groups(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let counts = self.group_counts();
        match counts.iter().position(|&c| c == 0) {
            Some(g) => Err(Error::MissingGroup(g)),
            None => Ok(()),
        }
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn domain(&self) -> LabelDomain {
        self.domain
    }

    pub fn groups(&self) -> &GroupSet {
        &self.groups
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn labels(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y).collect()
    }

    pub fn group_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.group_count()];
        for r in &self.records {
            counts[r.group.0] += 1;
        }
        counts
    }

    pub fn has_bands(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.band.is_some())
    }

    /// Pairs every record with its predicted band.
    pub fn observations(&self, predictor: &dyn BandPredictor) -> Result<Vec<Observation>> {
        self.records
            .iter()
            .map(|r| {
                Ok(Observation {
                    y: r.y,
                    group: r.group,
                    band: predictor.band(r)?,
                })
            })
            .collect()
    }

    /// Copy of this dataset restricted to `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            domain: self.domain,
            groups: self.groups.clone(),
            feature_dim: self.feature_dim,
        }
    }
}

/// Column names for CSV ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub id: String,
    pub y: String,
    pub group: String,
    pub q_lo: String,
    pub q_hi: String,
    /// Feature columns are `{prefix}0 .. {prefix}{d-1}`.
    pub feature_prefix: String,
    /// Declared group count; inferred as `max id + 1` when absent.
    pub group_count: Option<usize>,
    pub domain: LabelDomain,
}

impl CsvSchema {
    pub fn new(domain: LabelDomain) -> Self {
        Self {
            id: "id".into(),
            y: "y".into(),
            group: "group".into(),
            q_lo: "q_lo".into(),
            q_hi: "q_hi".into(),
            feature_prefix: "x".into(),
            group_count: None,
            domain,
        }
    }
}

pub fn load_dataset(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    read_dataset(File::open(path)?, schema)
}

/// Parses a dataset CSV. Records keep file order; every declared group must
/// appear at least once.
pub fn read_dataset<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| column(name).ok_or_else(|| Error::MissingColumn(name.to_string()));

    let id_col = need(&schema.id)?;
    let y_col = need(&schema.y)?;
    let group_col = need(&schema.group)?;
    let band_cols = match (column(&schema.q_lo), column(&schema.q_hi)) {
        (Some(lo), Some(hi)) => Some((lo, hi)),
        (None, None) => None,
        (Some(_), None) => return Err(Error::MissingColumn(schema.q_hi.clone())),
        (None, Some(_)) => return Err(Error::MissingColumn(schema.q_lo.clone())),
    };

    let mut features: BTreeMap<usize, usize> = BTreeMap::new();
    for (pos, h) in headers.iter().enumerate() {
        if let Some(idx) = h.strip_prefix(schema.feature_prefix.as_str()) {
            if let Ok(j) = idx.parse::<usize>() {
                features.insert(j, pos);
            }
        }
    }
    if features.keys().enumerate().any(|(expect, &j)| expect != j) {
        return Err(Error::InvalidConfig(format!(
            "feature columns must be {p}0..{p}{{d-1}} without gaps",
            p = schema.feature_prefix
        )));
    }
    let feature_cols: Vec<usize> = features.into_values().collect();

    let mut records = Vec::new();
    let mut max_group = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let field = |col: usize| rec.get(col).unwrap_or_default();
        let num = |col: usize, what: &str| -> Result<f64> {
            let raw = field(col);
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                message: format!("non-numeric {what} `{raw}`"),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse {
                    row,
                    message: format!("non-finite {what}"),
                })
            }
        };
        let y = num(y_col, "label")?;
        let group: usize = field(group_col).parse().map_err(|_| Error::Parse {
            row,
            message: format!(
                "group id `{}` is not a non-negative integer",
                field(group_col)
            ),
        })?;
        if let Some(declared) = schema.group_count {
            if group >= declared {
                return Err(Error::UnknownGroup {
                    row,
                    group,
                    declared,
                });
            }
        }
        max_group = max_group.max(group);
        let band = match band_cols {
            Some((lo, hi)) => Some(Band::from_bounds(num(lo, "q_lo")?, num(hi, "q_hi")?)?),
            None => None,
        };
        let feats = feature_cols
            .iter()
            .map(|&c| num(c, "feature"))
            .collect::<Result<Vec<_>>>()?;
        records.push(Record {
            id: field(id_col).to_string(),
            y,
            group: GroupId(group),
            features: feats,
            band,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let group_count = schema.group_count.unwrap_or(max_group + 1);
    let ds = Dataset::new(records, schema.domain, GroupSet::anonymous(group_count)?)?;
    ds.require_all_groups()?;
    Ok(ds)
}

/// Writes the dataset in the same layout [`read_dataset`] accepts. Band
/// columns are emitted when every record carries one.
pub fn write_dataset<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let with_bands = ds.has_bands();
    let mut header = vec!["id".to_string(), "y".to_string(), "group".to_string()];
    if with_bands {
        header.push("q_lo".into());
        header.push("q_hi".into());
    }
    header.extend((0..ds.feature_dim()).map(|j| format!("x{j}")));
    wtr.write_record(&header)?;
    for r in ds.records() {
        let mut row = vec![r.id.clone(), r.y.to_string(), r.group.to_string()];
        if let (true, Some(b)) = (with_bands, r.band) {
            row.push(b.lo.to_string());
            row.push(b.hi.to_string());
        }
        row.extend(r.features.iter().map(f64::to_string));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Fractions for the train / calibration / test parts and the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(fractions: [f64; 3], seed: u64) -> Result<Self> {
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidConfig(format!(
                "split fractions {fractions:?} must lie in [0, 1]"
            )));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "split fractions sum to {sum}, expected 1"
            )));
        }
        Ok(Self { fractions, seed })
    }

    /// Part sizes for `n` records. Train and calibration sizes are rounded,
    /// the test part takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = ((self.fractions[0] * n as f64).round() as usize).min(n);
        let cal = ((self.fractions[1] * n as f64).round() as usize).min(n - train);
        (train, cal, n - train - cal)
    }
}

/// Shuffles record indices with a seeded ChaCha stream and cuts them into
/// train / calibration / test parts.
pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (n_train, n_cal, n_test) = spec.sizes(ds.len());
    if n_cal == 0 {
        return Err(Error::EmptySplit("calibration"));
    }
    if n_test == 0 {
        return Err(Error::EmptySplit("test"));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (train, rest) = order.split_at(n_train);
    let (cal, test) = rest.split_at(n_cal);
    Ok((ds.subset(train), ds.subset(cal), ds.subset(test)))
}
