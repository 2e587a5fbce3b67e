//! Analytic gradients against central finite differences.

use super::{finite_differences, SuiteReport};
use dum_core::heads::{RadialFlow, RadialFlowDirichletHead, RbfCentroidHead, RffGpLaplaceHead};
use dum_core::nn::{Activation, MlpModel, MlpSpec, Mode, TrainableHead};
use dum_core::regularize::{gradient_penalty, reconstruction_loss, ScalarHead, SumOutputs};
use dum_core::{Matrix, Rng};

const EPS: f64 = 1e-5;
const ABS: f64 = 1e-4;
const REL: f64 = 1e-3;

fn linear_functional(out: &Matrix, c: &Matrix) -> f64 {
    out.inner(c).unwrap()
}

fn with_weight(model: &MlpModel, layer: usize, values: &[f64]) -> MlpModel {
    let mut m = model.clone();
    m.layers[layer].weight.data_mut().copy_from_slice(values);
    m
}

fn with_bias(model: &MlpModel, layer: usize, values: &[f64]) -> MlpModel {
    let mut m = model.clone();
    m.layers[layer].bias.copy_from_slice(values);
    m
}

pub fn mlp_backward_matches_differences(r: &mut SuiteReport) {
    for (seed, sn, dropout) in [(1, false, 0.0), (2, true, 0.0), (3, false, 0.3), (4, true, 0.25)] {
        let mut rng = Rng::new(seed);
        let mut spec = MlpSpec::new(4, &[6, 5], Some(3)).with_dropout(dropout);
        if sn {
            spec = spec.with_spectral_norm(0.7);
        }
        let mut model = MlpModel::new(&spec, &mut rng).unwrap();
        model.refresh_spectral(3).unwrap();
        let x = rng.normal_matrix(5, 4, 1.0);
        let trace = model.forward(&x, Mode::Train, &mut rng).unwrap();
        let c = rng.normal_matrix(5, 3, 1.0);
        let fz = rng.normal_matrix(5, model.feature_dim(), 1.0);
        let grads = model.backward(&trace, &c, Some(&fz)).unwrap();
        let loss = |m: &MlpModel| {
            let t = m.replay(&trace).unwrap();
            linear_functional(t.output(), &c) + linear_functional(t.features(), &fz)
        };
        for l in 0..model.layers.len() {
            let w = model.layers[l].weight.data().to_vec();
            let num = finite_differences(&w, EPS, |p| loss(&with_weight(&model, l, p)));
            r.gradients(&format!("seed {seed} W{l}"), grads.weights[l].data(), &num, ABS, REL);
            let b = model.layers[l].bias.clone();
            let num = finite_differences(&b, EPS, |p| loss(&with_bias(&model, l, p)));
            r.gradients(&format!("seed {seed} b{l}"), &grads.biases[l], &num, ABS, REL);
        }
        let num = finite_differences(x.data(), EPS, |p| {
            let mut t = trace.clone();
            t.input = Matrix::new(5, 4, p.to_vec()).unwrap();
            let t = model.replay(&t).unwrap();
            linear_functional(t.output(), &c) + linear_functional(t.features(), &fz)
        });
        r.gradients("input", grads.input.data(), &num, ABS, REL);
    }
}

pub fn half_squared_logits_on_a_linear_model(r: &mut SuiteReport) {
    let mut rng = Rng::new(9);
    let model = MlpModel::new(&MlpSpec::new(3, &[], Some(2)), &mut rng).unwrap();
    let x = rng.normal_matrix(4, 3, 1.0);
    let trace = model.forward(&x, Mode::Eval, &mut rng).unwrap();
    let logits = trace.output().clone();
    let grads = model.backward(&trace, &logits, None).unwrap();
    // ∂/∂W ½‖xW + b‖² = xᵀ(xW + b)
    let expect = x.t_matmul(&logits).unwrap();
    r.compare("closed form", grads.weights[0].max_abs_diff(&expect), 0.0, 1e-12);
    let zero = model.backward(&trace, &Matrix::zeros(4, 2), None).unwrap();
    r.require("zero upstream gradient", zero.weights[0].data().iter().all(|&v| v == 0.0));
}

fn penalty_case(r: &mut SuiteReport, model: &MlpModel, head: &dyn ScalarHead, x: &Matrix, what: &str) {
    let lambda = 0.7;
    let p = gradient_penalty(model, head, x, lambda, 1.0).unwrap();
    let value = |m: &MlpModel| gradient_penalty(m, head, x, lambda, 1.0).unwrap().penalty;
    for l in 0..model.layers.len() {
        let w = model.layers[l].weight.data().to_vec();
        let num = finite_differences(&w, EPS, |q| value(&with_weight(model, l, q)));
        r.gradients(&format!("{what} W{l}"), p.model.weights[l].data(), &num, ABS, REL);
        let b = model.layers[l].bias.clone();
        let num = finite_differences(&b, EPS, |q| value(&with_bias(model, l, q)));
        r.gradients(&format!("{what} b{l}"), &p.model.biases[l], &num, ABS, REL);
    }
}

pub fn gradient_penalty_double_backprop(r: &mut SuiteReport) {
    let mut rng = Rng::new(21);
    // two-layer net, scalar output summed
    let model = MlpModel::new(&MlpSpec::new(3, &[7], Some(1)), &mut rng).unwrap();
    let x = rng.normal_matrix(6, 3, 1.0);
    penalty_case(r, &model, &SumOutputs, &x, "sum head");

    // spectrally normalized net with an active normalization
    let mut model = MlpModel::new(&MlpSpec::new(3, &[8, 6], Some(2)).with_spectral_norm(0.5), &mut rng).unwrap();
    model.refresh_spectral(5).unwrap();
    r.require("normalization active", model.layers.iter().any(|l| l.effective_scale() < 1.0));
    penalty_case(r, &model, &SumOutputs, &x, "sn net");
}

pub fn gradient_penalty_through_rbf_kernels(r: &mut SuiteReport) {
    let mut rng = Rng::new(22);
    let model = MlpModel::new(&MlpSpec::new(3, &[6], None), &mut rng).unwrap();
    let mut head = RbfCentroidHead::new(6, 3, 4, 0.8, 0.99, &mut rng).unwrap();
    let x = rng.normal_matrix(5, 3, 1.0);
    // put centroids near the data so kernels are not vanishingly small
    let z = model.features(&x).unwrap();
    head.update_centroids(&z, &[0, 1, 2, 0, 1], 0.0).unwrap();
    penalty_case(r, &model, &head, &x, "rbf head");

    let lambda = 0.7;
    let p = gradient_penalty(&model, &head, &x, lambda, 1.0).unwrap();
    let w = head.weight.data().to_vec();
    let num = finite_differences(&w, EPS, |q| {
        let mut h = head.clone();
        h.weight.data_mut().copy_from_slice(q);
        gradient_penalty(&model, &h, &x, lambda, 1.0).unwrap().penalty
    });
    r.gradients("rbf head weights", &p.head[0], &num, ABS, REL);
}

pub fn rbf_scalar_and_hessian(r: &mut SuiteReport) {
    let mut rng = Rng::new(23);
    let mut head = RbfCentroidHead::new(4, 3, 5, 1.0, 0.9, &mut rng).unwrap();
    let z = rng.normal_matrix(3, 4, 0.5);
    head.update_centroids(&z, &[0, 1, 2], 0.0).unwrap();
    let z = rng.normal_matrix(3, 4, 0.5);
    let (_, g) = head.scalar_and_grad(&z).unwrap();
    let num = finite_differences(z.data(), EPS, |q| {
        head.scalar_and_grad(&Matrix::new(3, 4, q.to_vec()).unwrap()).unwrap().0.iter().sum()
    });
    r.gradients("∇g", g.data(), &num, 1e-7, REL);
    let dir = rng.normal_matrix(3, 4, 1.0);
    let (hz, _) = head.hessian_vector(&z, &dir).unwrap();
    let num = finite_differences(z.data(), EPS, |q| {
        head.scalar_and_grad(&Matrix::new(3, 4, q.to_vec()).unwrap()).unwrap().1.inner(&dir).unwrap()
    });
    r.gradients("H r", hz.data(), &num, 1e-7, REL);
}

pub fn reconstruction_gradients(r: &mut SuiteReport) {
    let mut rng = Rng::new(31);
    let decoder = MlpModel::new(&MlpSpec::new(4, &[7], Some(5)), &mut rng).unwrap();
    r.require("linear decoder output", decoder.layers.last().unwrap().activation == Activation::Linear);
    let z = rng.normal_matrix(6, 4, 1.0);
    let x = rng.uniform_matrix(6, 5, 0.0, 1.0);
    let rec = reconstruction_loss(&decoder, &z, &x, 1.3).unwrap();
    let num = finite_differences(z.data(), EPS, |q| {
        reconstruction_loss(&decoder, &Matrix::new(6, 4, q.to_vec()).unwrap(), &x, 1.3).unwrap().loss
    });
    r.gradients("z", rec.z_grad.data(), &num, ABS, REL);
    for l in 0..decoder.layers.len() {
        let w = decoder.layers[l].weight.data().to_vec();
        let num = finite_differences(&w, EPS, |q| {
            reconstruction_loss(&with_weight(&decoder, l, q), &z, &x, 1.3).unwrap().loss
        });
        r.gradients(&format!("decoder W{l}"), rec.decoder.weights[l].data(), &num, ABS, REL);
    }
}

pub fn radial_flow_log_prob_gradients(r: &mut SuiteReport) {
    for seed in 0..5 {
        let mut rng = Rng::new(40 + seed);
        let flow = RadialFlow::new(3, 4, &mut rng).unwrap();
        let z = rng.normal_vec(3);
        let mut pg = vec![0.0; flow.params.len()];
        let (lp, gz) = flow.log_prob_backward(&z, 1.0, &mut pg).unwrap();
        r.compare("flow log prob", lp, flow.log_prob(&z).unwrap(), 1e-12);
        let num = finite_differences(&z, EPS, |q| flow.log_prob(q).unwrap());
        r.gradients("flow z", &gz, &num, ABS, REL);
        let num = finite_differences(&flow.params, EPS, |q| {
            let mut f = flow.clone();
            f.params.copy_from_slice(q);
            f.log_prob(&z).unwrap()
        });
        r.gradients("flow params", &pg, &num, ABS, REL);
    }
}

fn head_loss_case<H: TrainableHead + Clone>(
    r: &mut SuiteReport,
    head: &H,
    z: &Matrix,
    labels: &[usize],
    params: impl Fn(&H) -> Vec<Vec<f64>>,
    set: impl Fn(&mut H, usize, &[f64]),
    what: &str,
) {
    let mut h = head.clone();
    let l = h.loss_and_grad(z, labels).unwrap();
    let num = finite_differences(z.data(), EPS, |q| {
        head.clone().loss_and_grad(&Matrix::new(z.rows(), z.cols(), q.to_vec()).unwrap(), labels).unwrap().loss
    });
    r.gradients(&format!("{what} z"), l.input_grad.data(), &num, ABS, REL);
    for (slot, values) in params(head).iter().enumerate() {
        let num = finite_differences(values, EPS, |q| {
            let mut h = head.clone();
            set(&mut h, slot, q);
            h.loss_and_grad(z, labels).unwrap().loss
        });
        r.gradients(&format!("{what} slot {slot}"), &l.param_grads[slot], &num, ABS, REL);
    }
}

pub fn rbf_kernel_loss_gradients(r: &mut SuiteReport) {
    let mut rng = Rng::new(50);
    let mut head = RbfCentroidHead::new(5, 3, 4, 0.5, 0.99, &mut rng).unwrap();
    let z = rng.normal_matrix(6, 5, 0.7);
    let labels = [0, 1, 2, 2, 1, 0];
    head.update_centroids(&z, &labels, 0.0).unwrap();
    let z = rng.normal_matrix(6, 5, 0.7);
    head_loss_case(
        r,
        &head,
        &z,
        &labels,
        |h| vec![h.weight.data().to_vec()],
        |h, _, q| h.weight.data_mut().copy_from_slice(q),
        "rbf",
    );
}

pub fn gp_head_loss_gradients(r: &mut SuiteReport) {
    let mut rng = Rng::new(51);
    let head = RffGpLaplaceHead::new(4, 16, 3, 1.5, 30.0, &mut rng).unwrap();
    let z = rng.normal_matrix(5, 4, 1.0);
    head_loss_case(
        r,
        &head,
        &z,
        &[2, 0, 1, 1, 0],
        |h| vec![h.beta.data().to_vec()],
        |h, _, q| h.beta.data_mut().copy_from_slice(q),
        "gp",
    );
}

pub fn flow_dirichlet_loss_gradients(r: &mut SuiteReport) {
    let mut rng = Rng::new(52);
    let head = RadialFlowDirichletHead::new(2, 3, vec![30.0, 50.0, 20.0], 1e-2, &mut rng).unwrap();
    let z = rng.normal_matrix(4, 2, 0.8);
    head_loss_case(
        r,
        &head,
        &z,
        &[0, 2, 1, 1],
        |h| h.flows.iter().map(|f| f.params.clone()).collect(),
        |h, slot, q| h.flows[slot].params.copy_from_slice(q),
        "postnet",
    );
}

/// Every case above, in one report.
pub fn suite() -> SuiteReport {
    let mut r = SuiteReport::default();
    let cases: [fn(&mut SuiteReport); 10] = [
        mlp_backward_matches_differences,
        half_squared_logits_on_a_linear_model,
        gradient_penalty_double_backprop,
        gradient_penalty_through_rbf_kernels,
        rbf_scalar_and_hessian,
        reconstruction_gradients,
        radial_flow_log_prob_gradients,
        rbf_kernel_loss_gradients,
        gp_head_loss_gradients,
        flow_dirichlet_loss_gradients,
    ];
    for case in cases {
        case(&mut r);
    }
    r
}
