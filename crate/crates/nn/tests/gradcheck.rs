// SPDX-License-Identifier: Apache-2.0

mod support;

use rtloc_nn::{GatV2, Graph, Mode, ParamStore, Tensor};
use support::gradchecks::{self, worst, Check, TOL};

fn run(checks: Vec<Check>) {
    for c in &checks {
        let err = worst(c);
        assert!(err <= TOL, "{}: relative error {err:e}", c.0);
    }
}

#[test]
fn elementwise_and_products() {
    run(gradchecks::elementwise_and_products());
}

#[test]
fn activations_and_normalizations() {
    run(gradchecks::activations_and_normalizations());
}

#[test]
fn indexing_and_segments() {
    run(gradchecks::indexing_and_segments());
}

#[test]
fn losses() {
    run(gradchecks::losses());
}

#[test]
fn layers() {
    run(gradchecks::layers());
}

#[test]
fn gatv2_two_node_hand_value() {
    // h0 = [1, 0], h1 = [0, 1], edge 0 -> 1 with edge feature [1].
    let mut s = ParamStore::new();
    let layer = GatV2::new(&mut s, "gat", 2, 2, 1, 0);
    *s.value_mut(layer.w_src) = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
    *s.value_mut(layer.w_dst) = Tensor::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
    *s.value_mut(layer.w_edge.unwrap()) = Tensor::from_rows(&[vec![-1.0, 1.0]]).unwrap();
    *s.value_mut(layer.attn) = Tensor::col_vector(&[1.0, -1.0]);
    let mut g = Graph::new(&s, Mode::Eval, 0);
    let h = g.input(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let ef = g.input(Tensor::from_rows(&[vec![1.0]]).unwrap());
    let y = layer.forward(&mut g, h, &[(0, 1)], Some(ef)).unwrap();
    let y = g.value(y);

    // Node 0 only has its self-loop: output = W_s h0 = [1, 0].
    assert!((y.get(0, 0) - 1.0).abs() < 1e-15 && y.get(0, 1).abs() < 1e-15);
    // Node 1: edge 0->1: z = Ws h0 + Wt h1 + We x = [1,0]+[0,0.5]+[-1,1] = [0, 1.5]
    //   lrelu -> [0, 1.5], logit = 0 - 1.5 = -1.5
    // self-loop 1->1: z = Ws h1 + Wt h1 = [0,2]+[0,0.5] = [0, 2.5], logit = -2.5
    let (e01, e11) = (-1.5f64, -2.5f64);
    let a01 = e01.exp() / (e01.exp() + e11.exp());
    let a11 = 1.0 - a01;
    let want = [a01 * 1.0 + a11 * 0.0, a01 * 0.0 + a11 * 2.0];
    assert!((y.get(1, 0) - want[0]).abs() < 1e-14);
    assert!((y.get(1, 1) - want[1]).abs() < 1e-14);
}
