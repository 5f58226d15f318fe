//! Users, their preferences and demographic groups, plus JSONL/CSV ingest.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::linalg;
use crate::losses::{LossModel, LossSpec, UNIT_NORM_TOL};

/// A user's preference parameter; finite coordinates, dimension at least one.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PreferenceVector(Vec<f64>);

impl PreferenceVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Validation("preference vector must have dimension >= 1".into()));
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("preference vector has a non-finite entry".into()));
        }
        Ok(Self(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl<'de> Deserialize<'de> for PreferenceVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        PreferenceVector::new(Vec::<f64>::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserProfile {
    pub user_id: usize,
    pub preference: PreferenceVector,
    pub loss: LossModel,
    pub group_id: usize,
}

/// An immutable, validated set of users partitioned into demographic groups.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    users: Vec<UserProfile>,
    groups: Vec<Vec<usize>>,
    group_labels: Vec<String>,
    dim: usize,
}

impl Population {
    /// Users may arrive in any order; ids must be exactly `0..n`.
    pub fn new(mut users: Vec<UserProfile>, group_labels: Vec<String>) -> Result<Self> {
        if users.is_empty() {
            return Err(Error::Validation("population must contain at least one user".into()));
        }
        let n = users.len();
        users.sort_by_key(|u| u.user_id);
        for (expected, u) in users.iter().enumerate() {
            if u.user_id != expected {
                let dup = expected > 0 && users[expected - 1].user_id == u.user_id;
                return Err(Error::Validation(if dup {
                    format!("duplicate user_id {}", u.user_id)
                } else {
                    format!("user ids must be exactly 0..{n}; missing {expected}")
                }));
            }
        }
        let dim = users[0].preference.dim();
        let m = group_labels.len();
        let mut groups = vec![Vec::new(); m];
        for u in &users {
            if u.preference.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: u.preference.dim(),
                });
            }
            if let Some(md) = u.loss.dim() {
                if md != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: md });
                }
            }
            u.loss.validate()?;
            if matches!(u.loss, LossModel::Cosine) {
                let norm = linalg::norm(u.preference.as_slice());
                if (norm - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::NonUnitNorm { norm });
                }
            }
            if u.group_id >= m {
                return Err(Error::Validation(format!(
                    "user {} refers to unknown group {}",
                    u.user_id, u.group_id
                )));
            }
            groups[u.group_id].push(u.user_id);
        }
        if let Some(g) = groups.iter().position(Vec::is_empty) {
            return Err(Error::Validation(format!("group {g} has no members")));
        }
        Ok(Self {
            users,
            groups,
            group_labels,
            dim,
        })
    }

    /// Convenience constructor from parallel arrays; group labels become `"0"..`.
    pub fn from_parts(
        preferences: Vec<Vec<f64>>,
        losses: Vec<LossModel>,
        group_ids: Vec<usize>,
    ) -> Result<Self> {
        if preferences.len() != losses.len() || preferences.len() != group_ids.len() {
            return Err(Error::Validation("parallel arrays differ in length".into()));
        }
        let m = group_ids.iter().copied().max().map_or(0, |g| g + 1);
        let users = preferences
            .into_iter()
            .zip(losses)
            .zip(group_ids)
            .enumerate()
            .map(|(user_id, ((phi, loss), group_id))| {
                Ok(UserProfile {
                    user_id,
                    preference: PreferenceVector::new(phi)?,
                    loss,
                    group_id,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(users, (0..m).map(|g| g.to_string()).collect())
    }

    /// Every user shares `loss` and sits in one group.
    pub fn uniform(preferences: Vec<Vec<f64>>, loss: LossModel) -> Result<Self> {
        let n = preferences.len();
        Self::from_parts(preferences, vec![loss; n], vec![0; n])
    }

    pub fn n(&self) -> usize {
        self.users.len()
    }

    pub fn m(&self) -> usize {
        self.groups.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn users(&self) -> &[UserProfile] {
        &self.users
    }

    pub fn user(&self, id: usize) -> Option<&UserProfile> {
        self.users.get(id)
    }

    /// Member lists `A_1..A_m`, each in increasing user id.
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_labels(&self) -> &[String] {
        &self.group_labels
    }

    pub fn group_of(&self, user: usize) -> usize {
        self.users[user].group_id
    }

    /// `|γ(i)|` for every user.
    pub fn member_group_sizes(&self) -> Vec<usize> {
        self.users
            .iter()
            .map(|u| self.groups[u.group_id].len())
            .collect()
    }

    /// Replaces group membership, keeping preferences and losses.
    pub fn with_groups(&self, group_ids: &[usize]) -> Result<Self> {
        if group_ids.len() != self.n() {
            return Err(Error::Validation("group assignment length differs from n".into()));
        }
        let m = group_ids.iter().copied().max().map_or(0, |g| g + 1);
        let users = self
            .users
            .iter()
            .zip(group_ids)
            .map(|(u, &g)| UserProfile {
                group_id: g,
                ..u.clone()
            })
            .collect();
        Self::new(users, (0..m).map(|g| g.to_string()).collect())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for u in &self.users {
            let record = UserRecord {
                user_id: u.user_id,
                group: GroupLabel::Text(self.group_labels[u.group_id].clone()),
                phi: u.preference.as_slice().to_vec(),
                loss: u.loss.to_spec(),
            };
            let line = serde_json::to_string(&record).expect("user record serializes");
            let _ = writeln!(out, "{line}");
        }
        out
    }
}

/// Group id → member count.
pub fn group_sizes(pop: &Population) -> BTreeMap<usize, usize> {
    pop.groups()
        .iter()
        .enumerate()
        .map(|(g, members)| (g, members.len()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IngestFormat {
    Jsonl,
    Csv,
}

impl IngestFormat {
    /// Guesses from the file extension; anything but `.csv` is JSON Lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => IngestFormat::Csv,
            _ => IngestFormat::Jsonl,
        }
    }
}

pub fn load_population(path: impl AsRef<Path>, format: IngestFormat) -> Result<Population> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        IngestFormat::Jsonl => parse_jsonl(&text),
        IngestFormat::Csv => parse_csv(&text),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum GroupLabel {
    Text(String),
    Number(i64),
}

impl GroupLabel {
    fn into_string(self) -> String {
        match self {
            GroupLabel::Text(s) => s,
            GroupLabel::Number(n) => n.to_string(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UserRecord {
    user_id: usize,
    group: GroupLabel,
    phi: Vec<f64>,
    loss: LossSpec,
}

/// Interns group labels to dense ids in first-appearance order.
#[derive(Default)]
struct GroupInterner {
    ids: HashMap<String, usize>,
    labels: Vec<String>,
}

impl GroupInterner {
    fn intern(&mut self, label: String) -> usize {
        if let Some(&id) = self.ids.get(&label) {
            return id;
        }
        let id = self.labels.len();
        self.ids.insert(label.clone(), id);
        self.labels.push(label);
        id
    }
}

fn build_user(
    line: usize,
    user_id: usize,
    phi: Vec<f64>,
    spec: &LossSpec,
    group_id: usize,
    expected_dim: &mut Option<usize>,
) -> Result<UserProfile> {
    let d = phi.len();
    match *expected_dim {
        Some(e) if e != d => {
            return Err(Error::DimensionMismatch { expected: e, got: d }
                .context(format!("record at line {line}")))
        }
        None => *expected_dim = Some(d),
        _ => {}
    }
    let preference = PreferenceVector::new(phi).map_err(|e| e.context(format!("line {line}")))?;
    let loss = LossModel::from_spec(spec, d).map_err(|e| e.context(format!("line {line}")))?;
    Ok(UserProfile {
        user_id,
        preference,
        loss,
        group_id,
    })
}

pub fn parse_jsonl(text: &str) -> Result<Population> {
    let mut groups = GroupInterner::default();
    let mut users = Vec::new();
    let mut dim = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: UserRecord = serde_json::from_str(raw).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let group_id = groups.intern(rec.group.into_string());
        users.push(build_user(line, rec.user_id, rec.phi, &rec.loss, group_id, &mut dim)?);
    }
    Population::new(users, groups.labels)
}

/// CSV columns: `user_id, group, phi_0..phi_{d-1}, family`, then optional
/// parameter columns `delta`, `lipschitz`, `mu`, `scale`. `scale` sets an
/// isotropic covariance (Mahalanobis families) or anchor (`lipschitz_sc`).
pub fn parse_csv(text: &str) -> Result<Population> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| {
        col(name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column {name:?}"),
        })
    };
    let id_col = required("user_id")?;
    let group_col = required("group")?;
    let family_col = required("family")?;
    let mut phi_cols = Vec::new();
    while let Some(c) = col(&format!("phi_{}", phi_cols.len())) {
        phi_cols.push(c);
    }
    if phi_cols.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no phi_0 column".into(),
        });
    }
    let param_cols: Vec<(&str, usize)> = ["delta", "lipschitz", "mu", "scale"]
        .into_iter()
        .filter_map(|name| col(name).map(|c| (name, c)))
        .collect();

    let mut groups = GroupInterner::default();
    let mut users = Vec::new();
    let mut dim = None;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let num = |c: usize| {
            field(c).parse::<f64>().map_err(|e| Error::Parse {
                line,
                message: format!("column {:?}: {e}", &headers[c]),
            })
        };
        let user_id = field(id_col).parse::<usize>().map_err(|e| Error::Parse {
            line,
            message: format!("user_id: {e}"),
        })?;
        let phi = phi_cols.iter().map(|&c| num(c)).collect::<Result<Vec<_>>>()?;
        let family = field(family_col).to_string();
        let mut params = Map::new();
        for &(name, c) in &param_cols {
            if field(c).is_empty() {
                continue;
            }
            let v = num(c)?;
            if name == "scale" {
                let d = phi.len();
                let key = if family == "lipschitz_sc" { "anchor" } else { "cov" };
                let rows: Vec<Vec<f64>> = (0..d)
                    .map(|i| (0..d).map(|j| if i == j { v } else { 0.0 }).collect())
                    .collect();
                params.insert(key.into(), serde_json::to_value(rows).expect("rows json"));
            } else {
                params.insert(name.into(), Value::from(v));
            }
        }
        let spec = LossSpec { family, params };
        let group_id = groups.intern(field(group_col).to_string());
        users.push(build_user(line, user_id, phi, &spec, group_id, &mut dim)?);
    }
    Population::new(users, groups.labels)
}
