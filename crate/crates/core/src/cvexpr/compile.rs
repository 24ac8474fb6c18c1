use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ast::{Expr, Func, NodeId};
use super::pipeline::CvPipeline;
use crate::error::{Error, Result};
use crate::featurize::FeatureKind;
use crate::vde::{Activation, Mlp};

/// A compiled collective variable: one expression over `x0..x{d-1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvExpression {
    pub text: String,
    pub inputs: Vec<String>,
    /// SHA-256 of the pipeline's JSON encoding.
    pub pipeline_hash: String,
    /// Text of each tICA linear combination feeding the encoder (empty
    /// without a tICA stage).
    pub tic_terms: Vec<String>,
}

fn constant(e: &mut Expr, v: f64) -> Result<NodeId> {
    if !v.is_finite() {
        return Err(Error::Compile(format!("non-finite constant {v}")));
    }
    Ok(e.num(v))
}

/// `sum_j w_j * in_j + b`, summed left to right like the direct evaluation.
fn affine(e: &mut Expr, weights: &[f64], inputs: &[NodeId], bias: Option<f64>) -> Result<NodeId> {
    let mut acc: Option<NodeId> = None;
    for (w, &x) in weights.iter().zip(inputs) {
        let c = constant(e, *w)?;
        let term = e.mul(c, x);
        acc = Some(match acc {
            None => term,
            Some(a) => e.add(a, term),
        });
    }
    let mut acc = acc.ok_or_else(|| Error::Compile("empty linear combination".into()))?;
    if let Some(b) = bias {
        let c = constant(e, b)?;
        acc = e.add(acc, c);
    }
    Ok(acc)
}

fn activate(e: &mut Expr, act: Activation, u: NodeId) -> NodeId {
    match act {
        Activation::Identity => u,
        Activation::Swish => {
            let s = e.call(Func::Sig, u);
            e.mul(u, s)
        }
        Activation::Tanh => {
            // tanh(u) = 2 sig(2u) - 1
            let two = e.num(2.0);
            let u2 = e.mul(two, u);
            let s = e.call(Func::Sig, u2);
            let two = e.num(2.0);
            let t = e.mul(two, s);
            let one = e.num(1.0);
            e.sub(t, one)
        }
    }
}

fn encoder(e: &mut Expr, mlp: &Mlp, mut cur: Vec<NodeId>) -> Result<NodeId> {
    let last = mlp.layers.len() - 1;
    for (i, layer) in mlp.layers.iter().enumerate() {
        let mut next = Vec::with_capacity(layer.n_out);
        for (row, b) in layer.weights.chunks_exact(layer.n_in).zip(&layer.bias) {
            let u = affine(e, row, &cur, Some(*b))?;
            next.push(if i < last { activate(e, mlp.activation, u) } else { u });
        }
        cur = next;
    }
    Ok(cur[0])
}

pub fn compile(p: &CvPipeline) -> Result<CvExpression> {
    p.validate()?;
    let mut e = Expr::new();
    let src: Vec<NodeId> = match &p.input_map {
        Some(map) => map.iter().map(|&j| e.var(j)).collect(),
        None => (0..p.input_dim).map(|j| e.var(j)).collect(),
    };

    let mut feats = Vec::new();
    for block in &p.features.blocks {
        let scaled = |e: &mut Expr, n: NodeId| -> Result<NodeId> {
            if block.scale == 1.0 {
                Ok(n)
            } else {
                let c = constant(e, block.scale)?;
                Ok(e.mul(c, n))
            }
        };
        match &block.kind {
            FeatureKind::Identity => {
                for &x in &src {
                    feats.push(scaled(&mut e, x)?);
                }
            }
            FeatureKind::SinCos => {
                for &x in &src {
                    let s = e.call(Func::Sin, x);
                    feats.push(scaled(&mut e, s)?);
                    let c = e.call(Func::Cos, x);
                    feats.push(scaled(&mut e, c)?);
                }
            }
            FeatureKind::PairDistances { .. } => {
                return Err(Error::Compile(
                    "pair-distance features need |.|, which the expression grammar lacks".into(),
                ))
            }
        }
    }

    if let Some(s) = &p.scaler {
        for (f, (m, sd)) in feats.iter_mut().zip(s.means.iter().zip(&s.stds)) {
            let mc = constant(&mut e, *m)?;
            let centered = e.sub(*f, mc);
            let sc = constant(&mut e, *sd)?;
            *f = e.div(centered, sc);
        }
    }

    let mut tic_terms = Vec::new();
    let enc_in = match &p.tica {
        Some(t) => {
            let centered: Vec<NodeId> = feats
                .iter()
                .zip(&t.model.means)
                .map(|(&f, m)| {
                    let mc = constant(&mut e, *m)?;
                    Ok(e.sub(f, mc))
                })
                .collect::<Result<_>>()?;
            let mut tics = Vec::with_capacity(t.n_tics);
            for v in &t.model.components[..t.n_tics] {
                let id = affine(&mut e, v, &centered, None)?;
                tic_terms.push(e.to_text_from(id));
                tics.push(id);
            }
            tics
        }
        None => feats,
    };

    encoder(&mut e, &p.encoder, enc_in)?;
    let json = serde_json::to_vec(p)?;
    let digest = Sha256::digest(&json);
    Ok(CvExpression {
        text: e.to_text(),
        inputs: (0..p.input_dim).map(|j| format!("x{j}")).collect(),
        pipeline_hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
        tic_terms,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::cvexpr::{parse, TicaStage};
    use crate::featurize::{FeatureSpec, Scaler};
    use crate::matrix::FeatureMatrix;
    use crate::tica::{fit, TicaOptions};
    use crate::vde::{Layer, MlpSpec, VdeModel};

    fn affine_pipeline() -> CvPipeline {
        let spec = MlpSpec::new(&[1, 1, 1], Activation::Identity);
        let mut vde = VdeModel::init(&spec, 1, 0.0, 1.0, 0).unwrap();
        vde.encoder = Mlp {
            activation: Activation::Identity,
            layers: vec![Layer { n_in: 1, n_out: 1, weights: vec![2.0], bias: vec![0.5] }],
        };
        CvPipeline::new(1, FeatureSpec::identity(), None, None, &vde).unwrap()
    }

    fn random_rows(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> =
            (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        FeatureMatrix::from_rows(&rows).unwrap()
    }

    fn sincos_pipeline(act: Activation, with_tica: bool) -> CvPipeline {
        let coords = random_rows(400, 2, 1);
        let spec = FeatureSpec::sincos();
        let feats = crate::featurize::featurize_matrix(&spec, &coords).unwrap();
        let scaler = Scaler::fit(&feats).unwrap();
        let (tica, width) = if with_tica {
            let scaled = scaler.apply(&feats).unwrap();
            let model = fit(&[&scaled], 3, &TicaOptions::default()).unwrap();
            (Some(TicaStage { model, n_tics: 2 }), 2)
        } else {
            (None, 4)
        };
        let vde = VdeModel::init(&MlpSpec::new(&[width, 16, 16, 1], act), 1, 0.1, 1.0, 7).unwrap();
        CvPipeline::new(2, spec, Some(scaler), tica, &vde).unwrap()
    }

    #[test]
    fn affine_text() {
        let cv = compile(&affine_pipeline()).unwrap();
        assert_eq!(cv.text, "((2*x0)+0.5)");
        assert_eq!(cv.inputs, vec!["x0"]);
        assert_eq!(cv.pipeline_hash.len(), 64);
        assert!(cv.tic_terms.is_empty());
    }

    #[test]
    fn compiled_matches_pipeline_and_gradient() {
        for act in [Activation::Swish, Activation::Tanh] {
            let p = sincos_pipeline(act, false);
            let cv = compile(&p).unwrap();
            let ast = parse(&cv.text).unwrap();
            let xs = random_rows(200, 2, 2);
            for x in xs.rows() {
                let (v, g) = p.value_and_gradient(x).unwrap();
                assert!((ast.eval(x) - v).abs() <= 1e-9);
                for (a, b) in ast.grad(x).iter().zip(&g) {
                    assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()));
                }
            }
        }
    }

    #[test]
    fn pipeline_gradient_matches_fd() {
        let p = sincos_pipeline(Activation::Swish, true);
        let x = [0.3, -1.2];
        let g = p.gradient(&x).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut a = x;
            let mut b = x;
            a[j] += h;
            b[j] -= h;
            let fd = (p.evaluate(&a).unwrap() - p.evaluate(&b).unwrap()) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn tica_stage_gives_two_inner_terms() {
        let p = sincos_pipeline(Activation::Swish, true);
        let cv = compile(&p).unwrap();
        assert_eq!(cv.tic_terms.len(), 2);
        for t in &cv.tic_terms {
            assert!(cv.text.contains(t.as_str()));
        }
        let ast = parse(&cv.text).unwrap();
        let x = [0.1, 2.0];
        assert!((ast.eval(&x) - p.evaluate(&x).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn input_map_reads_mapped_coordinates() {
        let mut p = affine_pipeline();
        p.input_dim = 3;
        p.input_map = Some(vec![2]);
        p.validate().unwrap();
        assert_eq!(p.evaluate(&[9.0, 9.0, 1.0]).unwrap(), 2.5);
        assert_eq!(p.gradient(&[0.0, 0.0, 0.0]).unwrap(), vec![0.0, 0.0, 2.0]);
        assert_eq!(compile(&p).unwrap().text, "((2*x2)+0.5)");
    }

    #[test]
    fn pair_distances_do_not_compile() {
        let mut p = affine_pipeline();
        p.input_dim = 2;
        p.features = FeatureSpec::single(crate::featurize::FeatureKind::PairDistances {
            pairs: vec![(0, 1)],
        });
        assert!(matches!(compile(&p), Err(Error::Compile(_))));
    }

    #[test]
    fn mismatched_stages_rejected() {
        let mut p = affine_pipeline();
        p.input_dim = 2;
        assert!(matches!(p.validate(), Err(Error::Shape { .. })));
    }
}
