//! Model-agnostic encoder boundary and two matrix-factorization encoders,
//! with the pairwise ranking losses and their analytic gradients.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::binio;
use crate::error::{Error, Result};
use crate::numkit::{
    adam_step_rows, all_finite, checked_dot, dot, sigmoid, softplus, AdamConfig, AdamState,
    RngStream,
};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Table {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Xavier-uniform with `fan_in = fan_out = cols`.
    pub fn xavier(rows: usize, cols: usize, rng: &mut RngStream) -> Self {
        let bound = (6.0 / (2 * cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Row gradients accumulated over a batch, keyed by row index so that
/// application order is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrads {
    pub users: BTreeMap<usize, Vec<f64>>,
    pub items: BTreeMap<usize, Vec<f64>>,
}

impl SparseGrads {
    fn add(map: &mut BTreeMap<usize, Vec<f64>>, row: usize, g: &[f64], scale: f64) {
        let acc = map.entry(row).or_insert_with(|| vec![0.0; g.len()]);
        for (a, v) in acc.iter_mut().zip(g) {
            *a += scale * v;
        }
    }

    pub fn add_user(&mut self, u: usize, g: &[f64], scale: f64) {
        Self::add(&mut self.users, u, g, scale);
    }

    pub fn add_item(&mut self, i: usize, g: &[f64], scale: f64) {
        Self::add(&mut self.items, i, g, scale);
    }
}

/// The encoder boundary: anything that maps users and items to vectors
/// scored by an inner product.
pub trait Encoder: Send + Sync {
    fn n_users(&self) -> usize;
    fn n_items(&self) -> usize;
    /// Dimension of the vectors returned by `embed_*`; the diffusion model
    /// operates in this space.
    fn dim(&self) -> usize;
    fn embed_user(&self, u: usize) -> Cow<'_, [f64]>;
    fn embed_item(&self, i: usize) -> Cow<'_, [f64]>;

    fn score(&self, u: usize, i: usize) -> f64 {
        dot(&self.embed_user(u), &self.embed_item(i))
    }

    /// Applies gradients expressed in embedding space to the touched rows.
    fn apply_grads(&mut self, grads: &SparseGrads, opt: &AdamConfig) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Mf,
    BiasedMf,
}

impl FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf" => Ok(Self::Mf),
            "mf_bias" => Ok(Self::BiasedMf),
            _ => Err(Error::InvalidArgument(format!("unknown encoder `{s}`"))),
        }
    }
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mf => "mf",
            Self::BiasedMf => "mf_bias",
        }
    }
}

/// Plain matrix factorization: `f(u, i) = p_u . q_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFactorization {
    users: Table,
    items: Table,
    user_opt: AdamState,
    item_opt: AdamState,
}

impl MatrixFactorization {
    pub fn new(n_users: usize, n_items: usize, d: usize, rng: &mut RngStream) -> Self {
        let users = Table::xavier(n_users, d, rng);
        let items = Table::xavier(n_items, d, rng);
        Self::from_tables(users, items)
    }

    pub fn from_tables(users: Table, items: Table) -> Self {
        let user_opt = AdamState::zeros(users.data.len());
        let item_opt = AdamState::zeros(items.data.len());
        Self {
            users,
            items,
            user_opt,
            item_opt,
        }
    }

    pub fn user_table(&self) -> &Table {
        &self.users
    }

    pub fn item_table(&self) -> &Table {
        &self.items
    }
}

impl Encoder for MatrixFactorization {
    fn n_users(&self) -> usize {
        self.users.rows
    }
    fn n_items(&self) -> usize {
        self.items.rows
    }
    fn dim(&self) -> usize {
        self.users.cols
    }
    fn embed_user(&self, u: usize) -> Cow<'_, [f64]> {
        Cow::Borrowed(self.users.row(u))
    }
    fn embed_item(&self, i: usize) -> Cow<'_, [f64]> {
        Cow::Borrowed(self.items.row(i))
    }
    fn score(&self, u: usize, i: usize) -> f64 {
        dot(self.users.row(u), self.items.row(i))
    }

    fn apply_grads(&mut self, grads: &SparseGrads, opt: &AdamConfig) -> Result<()> {
        let users: Vec<_> = grads.users.iter().map(|(k, v)| (*k, v.clone())).collect();
        let items: Vec<_> = grads.items.iter().map(|(k, v)| (*k, v.clone())).collect();
        adam_step_rows(
            &mut self.users.data,
            self.users.cols,
            &users,
            &mut self.user_opt,
            opt,
        )?;
        adam_step_rows(
            &mut self.items.data,
            self.items.cols,
            &items,
            &mut self.item_opt,
            opt,
        )
    }
}

/// Matrix factorization with an item bias folded into one extra dimension:
/// users embed as `(p_u, 1)`, items as `(q_i, b_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasedMatrixFactorization {
    inner: MatrixFactorization,
}

impl BiasedMatrixFactorization {
    pub fn new(n_users: usize, n_items: usize, d: usize, rng: &mut RngStream) -> Self {
        let users = Table::xavier(n_users, d, rng);
        let latent = Table::xavier(n_items, d, rng);
        let mut items = Table::zeros(n_items, d + 1);
        for i in 0..n_items {
            items.row_mut(i)[..d].copy_from_slice(latent.row(i));
        }
        Self::from_tables(users, items)
    }

    pub fn from_tables(users: Table, items: Table) -> Self {
        Self {
            inner: MatrixFactorization::from_tables(users, items),
        }
    }

    pub fn user_table(&self) -> &Table {
        &self.inner.users
    }

    pub fn item_table(&self) -> &Table {
        &self.inner.items
    }
}

impl Encoder for BiasedMatrixFactorization {
    fn n_users(&self) -> usize {
        self.inner.users.rows
    }
    fn n_items(&self) -> usize {
        self.inner.items.rows
    }
    fn dim(&self) -> usize {
        self.inner.items.cols
    }
    fn embed_user(&self, u: usize) -> Cow<'_, [f64]> {
        let mut v = self.inner.users.row(u).to_vec();
        v.push(1.0);
        Cow::Owned(v)
    }
    fn embed_item(&self, i: usize) -> Cow<'_, [f64]> {
        Cow::Borrowed(self.inner.items.row(i))
    }
    fn score(&self, u: usize, i: usize) -> f64 {
        let q = self.inner.items.row(i);
        let d = self.inner.users.cols;
        dot(self.inner.users.row(u), &q[..d]) + q[d]
    }

    fn apply_grads(&mut self, grads: &SparseGrads, opt: &AdamConfig) -> Result<()> {
        let d = self.inner.users.cols;
        // The constant user coordinate receives no update.
        let users: Vec<_> = grads
            .users
            .iter()
            .map(|(k, v)| (*k, v[..d].to_vec()))
            .collect();
        let items: Vec<_> = grads.items.iter().map(|(k, v)| (*k, v.clone())).collect();
        let m = &mut self.inner;
        adam_step_rows(&mut m.users.data, d, &users, &mut m.user_opt, opt)?;
        adam_step_rows(
            &mut m.items.data,
            m.items.cols,
            &items,
            &mut m.item_opt,
            opt,
        )
    }
}

/// The concrete encoders shipped with the toolkit.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderModel {
    Mf(MatrixFactorization),
    BiasedMf(BiasedMatrixFactorization),
}

impl EncoderModel {
    pub fn new(
        kind: EncoderKind,
        n_users: usize,
        n_items: usize,
        d: usize,
        rng: &mut RngStream,
    ) -> Self {
        match kind {
            EncoderKind::Mf => Self::Mf(MatrixFactorization::new(n_users, n_items, d, rng)),
            EncoderKind::BiasedMf => {
                Self::BiasedMf(BiasedMatrixFactorization::new(n_users, n_items, d, rng))
            }
        }
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            Self::Mf(_) => EncoderKind::Mf,
            Self::BiasedMf(_) => EncoderKind::BiasedMf,
        }
    }

    fn as_dyn(&self) -> &dyn Encoder {
        match self {
            Self::Mf(m) => m,
            Self::BiasedMf(m) => m,
        }
    }

    pub fn user_table(&self) -> &Table {
        match self {
            Self::Mf(m) => m.user_table(),
            Self::BiasedMf(m) => m.user_table(),
        }
    }

    pub fn item_table(&self) -> &Table {
        match self {
            Self::Mf(m) => m.item_table(),
            Self::BiasedMf(m) => m.item_table(),
        }
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.user_table().data) && all_finite(&self.item_table().data)
    }

    /// Encoder checkpoint: magic `ADEN`, u32 version, u32 kind, then the user
    /// and item tables as (u64 rows, u64 cols, row-major f64).
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(ENCODER_MAGIC)?;
        binio::write_u32(&mut w, ENCODER_VERSION)?;
        binio::write_u32(
            &mut w,
            match self.kind() {
                EncoderKind::Mf => 0,
                EncoderKind::BiasedMf => 1,
            },
        )?;
        for t in [self.user_table(), self.item_table()] {
            binio::write_u64(&mut w, t.rows as u64)?;
            binio::write_u64(&mut w, t.cols as u64)?;
            binio::write_f64s(&mut w, &t.data)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        binio::expect_magic(&mut r, ENCODER_MAGIC)?;
        let version = binio::read_u32(&mut r, "version")?;
        if version != ENCODER_VERSION {
            return Err(Error::Version {
                found: version,
                expected: ENCODER_VERSION,
            });
        }
        let kind = binio::read_u32(&mut r, "encoder kind")?;
        let mut tables = Vec::with_capacity(2);
        for name in ["user table", "item table"] {
            let rows = binio::read_u64(&mut r, name)? as usize;
            let cols = binio::read_u64(&mut r, name)? as usize;
            let data = binio::read_f64s(&mut r, rows * cols, name)?;
            tables.push(Table { rows, cols, data });
        }
        binio::expect_eof(&mut r)?;
        let items = tables.pop().expect("two tables");
        let users = tables.pop().expect("two tables");
        match kind {
            0 if users.cols == items.cols => {
                Ok(Self::Mf(MatrixFactorization::from_tables(users, items)))
            }
            1 if users.cols + 1 == items.cols => Ok(Self::BiasedMf(
                BiasedMatrixFactorization::from_tables(users, items),
            )),
            _ => Err(Error::Format(format!(
                "encoder kind {kind} inconsistent with table widths {} / {}",
                users.cols, items.cols
            ))),
        }
    }
}

const ENCODER_MAGIC: &[u8; 4] = b"ADEN";
const ENCODER_VERSION: u32 = 1;

impl Encoder for EncoderModel {
    fn n_users(&self) -> usize {
        self.as_dyn().n_users()
    }
    fn n_items(&self) -> usize {
        self.as_dyn().n_items()
    }
    fn dim(&self) -> usize {
        self.as_dyn().dim()
    }
    fn embed_user(&self, u: usize) -> Cow<'_, [f64]> {
        self.as_dyn().embed_user(u)
    }
    fn embed_item(&self, i: usize) -> Cow<'_, [f64]> {
        self.as_dyn().embed_item(i)
    }
    fn score(&self, u: usize, i: usize) -> f64 {
        self.as_dyn().score(u, i)
    }
    fn apply_grads(&mut self, grads: &SparseGrads, opt: &AdamConfig) -> Result<()> {
        match self {
            Self::Mf(m) => m.apply_grads(grads, opt),
            Self::BiasedMf(m) => m.apply_grads(grads, opt),
        }
    }
}

/// Inner-product score with a dimension check.
pub fn score(e_u: &[f64], e_x: &[f64]) -> Result<f64> {
    checked_dot(e_u, e_x)
}

/// Loss value and gradients for one `(u, i, j)` triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseGrads {
    pub loss: f64,
    pub user: Vec<f64>,
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

/// `-ln sigmoid(u.i - u.j)`.
pub fn bpr_loss_and_grads(e_u: &[f64], e_i: &[f64], e_j: &[f64]) -> Result<PairwiseGrads> {
    let d = e_u.len();
    if e_i.len() != d || e_j.len() != d {
        return Err(Error::ShapeMismatch(
            "bpr: embedding dimensions differ".into(),
        ));
    }
    let margin = dot(e_u, e_i) - dot(e_u, e_j);
    let loss = softplus(-margin);
    let g = -sigmoid(-margin);
    Ok(PairwiseGrads {
        loss,
        user: (0..d).map(|k| g * (e_i[k] - e_j[k])).collect(),
        pos: e_u.iter().map(|u| g * u).collect(),
        neg: e_u.iter().map(|u| -g * u).collect(),
    })
}

/// `-ln sigmoid(u.i - (u.j + lambda * u.e_d))`. The generated negative is a
/// constant: no gradient is returned for it.
pub fn d_bpr_loss_and_grads(
    e_u: &[f64],
    e_i: &[f64],
    e_j: &[f64],
    e_d: &[f64],
    lambda: f64,
) -> Result<PairwiseGrads> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    let d = e_u.len();
    if e_i.len() != d || e_j.len() != d || e_d.len() != d {
        return Err(Error::ShapeMismatch(
            "d-bpr: embedding dimensions differ".into(),
        ));
    }
    let margin = dot(e_u, e_i) - (dot(e_u, e_j) + lambda * dot(e_u, e_d));
    let loss = softplus(-margin);
    let g = -sigmoid(-margin);
    Ok(PairwiseGrads {
        loss,
        user: (0..d)
            .map(|k| g * (e_i[k] - e_j[k] - lambda * e_d[k]))
            .collect(),
        pos: e_u.iter().map(|u| g * u).collect(),
        neg: e_u.iter().map(|u| -g * u).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_examples() {
        assert_eq!(score(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert_eq!(score(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(score(&[1.0, 2.0], &[3.0, -1.0]).unwrap(), 1.0);
        assert!(score(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn bpr_equal_scores_is_ln2() {
        let g = bpr_loss_and_grads(&[0.3, -0.2], &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert!((g.loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bpr_limits() {
        let big = bpr_loss_and_grads(&[1.0], &[500.0], &[0.0]).unwrap();
        assert!(big.loss < 1e-200);
        let neg = bpr_loss_and_grads(&[1.0], &[0.0], &[500.0]).unwrap();
        assert!((neg.loss - 500.0).abs() < 1e-9);
        assert!(neg.user.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn d_bpr_reduces_to_bpr_at_zero_lambda() {
        let u = [0.3, -0.7, 1.1];
        let i = [0.2, 0.4, -0.5];
        let j = [-1.0, 0.1, 0.9];
        let ed = [3.0, -2.0, 0.5];
        let a = bpr_loss_and_grads(&u, &i, &j).unwrap();
        let b = d_bpr_loss_and_grads(&u, &i, &j, &ed, 0.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn d_bpr_zero_embeddings() {
        let z = [0.0; 4];
        let g = d_bpr_loss_and_grads(&z, &z, &z, &z, 0.7).unwrap();
        assert!((g.loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn d_bpr_hand_example() {
        // margin = 1 - 0.5 = 0.5; -ln sigmoid(0.5) = ln(1 + e^-0.5)
        let g =
            d_bpr_loss_and_grads(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], 0.5).unwrap();
        assert!((g.loss - 0.474_076_984_18).abs() < 1e-9, "{}", g.loss);
    }

    #[test]
    fn d_bpr_rejects_lambda() {
        let z = [0.0; 2];
        assert!(d_bpr_loss_and_grads(&z, &z, &z, &z, 1.5).is_err());
        assert!(d_bpr_loss_and_grads(&z, &z, &z, &z, -0.1).is_err());
    }

    #[test]
    fn xavier_bound() {
        let t = Table::xavier(50, 64, &mut RngStream::new(1, 0));
        let bound = (6.0f64 / 128.0).sqrt();
        assert!(t.data.iter().all(|v| v.abs() <= bound));
        assert!(t.data.iter().any(|v| v.abs() > 0.9 * bound));
    }

    #[test]
    fn biased_encoder_scores_with_bias() {
        let users = Table {
            rows: 1,
            cols: 2,
            data: vec![1.0, 2.0],
        };
        let items = Table {
            rows: 1,
            cols: 3,
            data: vec![0.5, 0.25, -3.0],
        };
        let enc = BiasedMatrixFactorization::from_tables(users, items);
        assert_eq!(enc.dim(), 3);
        assert_eq!(enc.score(0, 0), 1.0 - 3.0);
        assert_eq!(dot(&enc.embed_user(0), &enc.embed_item(0)), enc.score(0, 0));
    }

    #[test]
    fn sparse_update_touches_only_listed_rows() {
        let mut enc = EncoderModel::new(EncoderKind::Mf, 4, 5, 3, &mut RngStream::new(2, 0));
        let before = enc.clone();
        let mut grads = SparseGrads::default();
        grads.add_user(1, &[0.1, 0.2, 0.3], 1.0);
        grads.add_item(4, &[-0.1, 0.0, 0.3], 1.0);
        enc.apply_grads(&grads, &AdamConfig::default()).unwrap();
        for u in [0, 2, 3] {
            assert_eq!(enc.user_table().row(u), before.user_table().row(u));
        }
        for i in 0..4 {
            assert_eq!(enc.item_table().row(i), before.item_table().row(i));
        }
        assert_ne!(enc.user_table().row(1), before.user_table().row(1));
    }

    #[test]
    fn checkpoint_round_trip_and_truncation() {
        for kind in [EncoderKind::Mf, EncoderKind::BiasedMf] {
            let enc = EncoderModel::new(kind, 3, 4, 2, &mut RngStream::new(8, 0));
            let mut buf = Vec::new();
            enc.write_checkpoint(&mut buf).unwrap();
            let back = EncoderModel::read_checkpoint(buf.as_slice()).unwrap();
            assert_eq!(back.user_table(), enc.user_table());
            assert_eq!(back.item_table(), enc.item_table());
            assert_eq!(back.kind(), kind);
            let cut = &buf[..buf.len() - 3];
            assert!(matches!(
                EncoderModel::read_checkpoint(cut),
                Err(Error::Truncated(_))
            ));
        }
    }
}
