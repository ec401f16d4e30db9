use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{GradScale, Real, RecsysError};
use crate::rng::stream;

/// Output dimension of both towers.
pub const OUTPUT_DIM: usize = 128;

/// Probability clamp used by the loss.
pub const BCE_EPS: f64 = 1e-7;

/// The five parameter tensors, row-major. Also used for gradients and
/// optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors<T> {
    /// `n_users × out_dim`
    pub user_table: Vec<T>,
    /// `d_item × hidden`
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    /// `hidden × out_dim`
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

impl<T: Real> Tensors<T> {
    pub fn zeros_like(other: &Tensors<T>) -> Self {
        Tensors {
            user_table: vec![T::zero(); other.user_table.len()],
            w1: vec![T::zero(); other.w1.len()],
            b1: vec![T::zero(); other.b1.len()],
            w2: vec![T::zero(); other.w2.len()],
            b2: vec![T::zero(); other.b2.len()],
        }
    }

    pub fn fill_zero(&mut self) {
        for (t, _) in self.parts_mut() {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Tensors with their weight-decay flag (biases are not decayed).
    pub fn parts(&self) -> [(&[T], bool); 5] {
        [
            (&self.user_table, true),
            (&self.w1, true),
            (&self.b1, false),
            (&self.w2, true),
            (&self.b2, false),
        ]
    }

    pub fn parts_mut(&mut self) -> [(&mut Vec<T>, bool); 5] {
        [
            (&mut self.user_table, true),
            (&mut self.w1, true),
            (&mut self.b1, false),
            (&mut self.w2, true),
            (&mut self.b2, false),
        ]
    }

    pub fn squared_norm(&self) -> f64 {
        self.parts()
            .iter()
            .flat_map(|(t, _)| t.iter())
            .map(|v| {
                let v = v.to_f64().unwrap_or(f64::NAN);
                v * v
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoTowerParams<T> {
    pub d_item: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub user_ids: Vec<String>,
    pub tensors: Tensors<T>,
    user_index: HashMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOutput<T> {
    pub logit: T,
    pub prob: T,
}

/// One training example: user row, item content vector and 0/1 label.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a, T> {
    pub user: usize,
    pub item: &'a [T],
    pub label: T,
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Randomly initialised parameters with the standard output dimension.
pub fn init_params<T: Real>(user_ids: Vec<String>, d_item: usize, hidden: usize, seed: u64) -> TwoTowerParams<T> {
    init_params_with(user_ids, d_item, hidden, OUTPUT_DIM, seed)
}

/// User table ~ N(0, 0.01²); weight matrices ~ N(0, 1/fan_in); biases 0.
pub fn init_params_with<T: Real>(
    user_ids: Vec<String>,
    d_item: usize,
    hidden: usize,
    out_dim: usize,
    seed: u64,
) -> TwoTowerParams<T> {
    assert!(!user_ids.is_empty() && d_item > 0 && hidden > 0 && out_dim > 0);
    let gaussian = |label: &str, n: usize, std: f64| -> Vec<T> {
        let mut rng = stream(seed, &["init", label]);
        (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                T::of(z * std)
            })
            .collect()
    };
    let tensors = Tensors {
        user_table: gaussian("user_table", user_ids.len() * out_dim, 0.01),
        w1: gaussian("w1", d_item * hidden, 1.0 / (d_item as f64).sqrt()),
        b1: vec![T::zero(); hidden],
        w2: gaussian("w2", hidden * out_dim, 1.0 / (hidden as f64).sqrt()),
        b2: vec![T::zero(); out_dim],
    };
    TwoTowerParams::from_tensors(user_ids, d_item, hidden, out_dim, tensors)
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

struct ItemPass<T> {
    x: Vec<T>,
    z1: Vec<T>,
    e: Vec<T>,
}

impl<T: Real> TwoTowerParams<T> {
    pub fn from_tensors(
        user_ids: Vec<String>,
        d_item: usize,
        hidden: usize,
        out_dim: usize,
        tensors: Tensors<T>,
    ) -> Self {
        assert_eq!(tensors.user_table.len(), user_ids.len() * out_dim);
        assert_eq!(tensors.w1.len(), d_item * hidden);
        assert_eq!(tensors.b1.len(), hidden);
        assert_eq!(tensors.w2.len(), hidden * out_dim);
        assert_eq!(tensors.b2.len(), out_dim);
        let user_index = user_ids.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        TwoTowerParams {
            d_item,
            hidden,
            out_dim,
            user_ids,
            tensors,
            user_index,
        }
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn user_index(&self, user_id: &str) -> Result<usize, RecsysError> {
        self.user_index
            .get(user_id)
            .copied()
            .ok_or_else(|| RecsysError::UnknownUser(user_id.to_string()))
    }

    pub fn user_row(&self, user: usize) -> &[T] {
        &self.tensors.user_table[user * self.out_dim..(user + 1) * self.out_dim]
    }

    fn check_dim(&self, x: &[T]) -> Result<(), RecsysError> {
        if x.len() != self.d_item {
            return Err(RecsysError::DimMismatch {
                expected: self.d_item,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn item_pass(&self, x: &[T], mask: Option<&[T]>) -> ItemPass<T> {
        let (h, o) = (self.hidden, self.out_dim);
        let t = &self.tensors;
        let x: Vec<T> = match mask {
            Some(m) => x.iter().zip(m).map(|(&v, &k)| v * k).collect(),
            None => x.to_vec(),
        };
        let mut z1 = t.b1.clone();
        for (i, &xi) in x.iter().enumerate() {
            let row = &t.w1[i * h..(i + 1) * h];
            for (z, &w) in z1.iter_mut().zip(row) {
                *z += xi * w;
            }
        }
        let mut e = t.b2.clone();
        for (j, &zj) in z1.iter().enumerate() {
            if zj > T::zero() {
                let row = &t.w2[j * o..(j + 1) * o];
                for (ek, &w) in e.iter_mut().zip(row) {
                    *ek += zj * w;
                }
            }
        }
        ItemPass { x, z1, e }
    }

    /// Item-tower output in inference mode.
    pub fn item_embedding(&self, x: &[T]) -> Result<Vec<T>, RecsysError> {
        self.check_dim(x)?;
        Ok(self.item_pass(x, None).e)
    }

    /// Logit of an already computed item embedding.
    pub fn score_embedding(&self, user: usize, item_emb: &[T]) -> T {
        dot(self.user_row(user), item_emb)
    }

    pub fn forward(&self, user_id: &str, item_vec: &[T], dropout_mask: Option<&[T]>) -> Result<ForwardOutput<T>, RecsysError> {
        let u = self.user_index(user_id)?;
        self.check_dim(item_vec)?;
        let pass = self.item_pass(item_vec, dropout_mask);
        let logit = dot(self.user_row(u), &pass.e);
        Ok(ForwardOutput {
            logit,
            prob: sigmoid(logit),
        })
    }

    /// Logits for every row of the `n × d_item` matrix `items`.
    pub fn predict_scores(&self, user_id: &str, items: &[T]) -> Result<Vec<T>, RecsysError> {
        let u = self.user_index(user_id)?;
        if self.d_item == 0 || items.len() % self.d_item != 0 {
            return Err(RecsysError::DimMismatch {
                expected: self.d_item,
                actual: items.len(),
            });
        }
        Ok(items
            .chunks_exact(self.d_item)
            .map(|x| self.score_embedding(u, &self.item_pass(x, None).e))
            .collect())
    }

    /// Summed BCE loss of the batch (accumulated in f64); writes the batch
    /// gradients into `grads`, reduced according to `scale`.
    pub fn loss_and_grads(
        &self,
        batch: &[Example<'_, T>],
        masks: Option<&[Vec<T>]>,
        scale: GradScale,
        grads: &mut Tensors<T>,
    ) -> f64 {
        grads.fill_zero();
        if batch.is_empty() {
            return 0.0;
        }
        let (d, h, o) = (self.d_item, self.hidden, self.out_dim);
        let s = match scale {
            GradScale::Mean => T::one() / T::of(batch.len() as f64),
            GradScale::Sum => T::one(),
        };
        let t = &self.tensors;
        let mut ge = vec![T::zero(); o];
        let mut dz1 = vec![T::zero(); h];
        let mut loss = 0.0f64;
        for (n, ex) in batch.iter().enumerate() {
            let mask = masks.map(|m| m[n].as_slice());
            let pass = self.item_pass(ex.item, mask);
            let u = self.user_row(ex.user);
            let logit = dot(u, &pass.e);
            let p = sigmoid(logit);
            loss += bce_single(p.to_f64().unwrap_or(f64::NAN), ex.label.to_f64().unwrap_or(f64::NAN));
            let g = (p - ex.label) * s;
            if g == T::zero() {
                continue;
            }
            let gu = &mut grads.user_table[ex.user * o..(ex.user + 1) * o];
            for k in 0..o {
                gu[k] += g * pass.e[k];
                ge[k] = g * u[k];
                grads.b2[k] += ge[k];
            }
            for j in 0..h {
                let zj = pass.z1[j];
                if zj > T::zero() {
                    let row = &t.w2[j * o..(j + 1) * o];
                    let grow = &mut grads.w2[j * o..(j + 1) * o];
                    let mut da = T::zero();
                    for k in 0..o {
                        grow[k] += zj * ge[k];
                        da += row[k] * ge[k];
                    }
                    dz1[j] = da;
                    grads.b1[j] += da;
                } else {
                    dz1[j] = T::zero();
                }
            }
            for i in 0..d {
                let xi = pass.x[i];
                if xi == T::zero() {
                    continue;
                }
                let grow = &mut grads.w1[i * h..(i + 1) * h];
                for j in 0..h {
                    grow[j] += xi * dz1[j];
                }
            }
        }
        loss
    }

    /// Summed loss without gradients.
    pub fn loss(&self, batch: &[Example<'_, T>], masks: Option<&[Vec<T>]>) -> f64 {
        batch
            .iter()
            .enumerate()
            .map(|(n, ex)| {
                let pass = self.item_pass(ex.item, masks.map(|m| m[n].as_slice()));
                let p = sigmoid(dot(self.user_row(ex.user), &pass.e));
                bce_single(p.to_f64().unwrap_or(f64::NAN), ex.label.to_f64().unwrap_or(f64::NAN))
            })
            .sum()
    }
}

fn bce_single(p: f64, y: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Summed binary cross-entropy with probabilities clamped to
/// `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce_loss(probs: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(probs.len(), labels.len(), "probs and labels differ in length");
    probs.iter().zip(labels).map(|(&p, &y)| bce_single(p, y)).sum()
}

pub fn bce_loss_mean(probs: &[f64], labels: &[f64]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    bce_loss(probs, labels) / probs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> TwoTowerParams<f64> {
        // d_item = h = out = 1, all weights 1, user embedding 2.
        TwoTowerParams::from_tensors(
            vec!["u".into()],
            1,
            1,
            1,
            Tensors {
                user_table: vec![2.0],
                w1: vec![1.0],
                b1: vec![1.0],
                w2: vec![1.0],
                b2: vec![1.0],
            },
        )
    }

    #[test]
    fn toy_forward_and_gradient() {
        let p = toy();
        // item tower: relu(3*1 + 1) * 1 + 1 = 5; logit = 2 * 5 = 10.
        let out = p.forward("u", &[3.0], None).unwrap();
        assert_eq!(out.logit, 10.0);
        let batch = [Example {
            user: 0,
            item: &[3.0][..],
            label: 0.0,
        }];
        let mut g = Tensors::zeros_like(&p.tensors);
        p.loss_and_grads(&batch, None, GradScale::Mean, &mut g);
        let s = 1.0 / (1.0 + (-10.0f64).exp());
        // dL/dlogit = s; dlogit/du = 5; dlogit/db2 = 2; dlogit/dw2 = 2*4;
        // dlogit/db1 = 2*1; dlogit/dw1 = 2*3.
        assert!((g.user_table[0] - s * 5.0).abs() < 1e-15);
        assert!((g.b2[0] - s * 2.0).abs() < 1e-15);
        assert!((g.w2[0] - s * 8.0).abs() < 1e-15);
        assert!((g.b1[0] - s * 2.0).abs() < 1e-15);
        assert!((g.w1[0] - s * 6.0).abs() < 1e-15);
    }

    #[test]
    fn zero_params_give_half() {
        let mut p = toy();
        p.tensors.fill_zero();
        let out = p.forward("u", &[3.0], None).unwrap();
        assert_eq!((out.logit, out.prob), (0.0, 0.5));
        assert!(matches!(p.forward("nobody", &[1.0], None), Err(RecsysError::UnknownUser(_))));
    }

    #[test]
    fn init_is_deterministic() {
        let users: Vec<String> = (0..800).map(|i| format!("u{i}")).collect();
        let a: TwoTowerParams<f32> = init_params(users.clone(), 16, 8, 3);
        let b: TwoTowerParams<f32> = init_params(users, 16, 8, 3);
        assert_eq!(a, b);
        assert!(a.tensors.b1.iter().chain(&a.tensors.b2).all(|&v| v == 0.0));
        let n = a.tensors.user_table.len() as f64;
        let mean = a.tensors.user_table.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = a.tensors.user_table.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(n >= 1e5);
        assert!((0.008..=0.012).contains(&var.sqrt()));
    }

    #[test]
    fn bce_points() {
        assert!((bce_loss(&[0.5], &[1.0]) - 2f64.ln()).abs() < 1e-9);
        assert!((bce_loss(&[0.5, 0.5], &[1.0, 0.0]) - 2.0 * 2f64.ln()).abs() < 1e-9);
        assert!(bce_loss(&[0.0], &[1.0]).is_finite());
    }
}
