use posrec_core::numcore::{grad_check_params, primitive_grad_check, Primitive, DEFAULT_STEP};
use posrec_core::posenc::EncodingKind;
use posrec_core::{ModelConfig, PosRecModel, Session};

#[test]
fn each_primitive_on_ten_inputs() {
    for p in Primitive::ALL {
        let err = primitive_grad_check(p, 10, 2024).unwrap();
        assert!(err < 1e-6, "{p}: {err:e}");
    }
}

fn model_error(kind: EncodingKind, anchors: bool, layer_norm: bool) -> f64 {
    let mut cfg = ModelConfig::new(9, 4, kind);
    cfg.max_len = 8;
    cfg.ffn_dim = 6;
    cfg.anchors = anchors;
    cfg.layer_norm = layer_norm;
    cfg.seed = 3;
    let model = PosRecModel::new(cfg).unwrap();
    let batch = vec![
        Session::with_label(vec![3, 1, 5, 1], 7).unwrap(),
        Session::with_label(vec![2, 8], 0).unwrap(),
    ];
    grad_check_params(
        model.params(),
        |tape, p| model.loss_on_tape(tape, p, &batch),
        DEFAULT_STEP,
    )
    .unwrap()
}

#[test]
fn full_model_all_schemes() {
    for kind in EncodingKind::ALL {
        let err = model_error(kind, true, true);
        assert!(err < 1e-4, "{kind}: {err:e}");
    }
}

#[test]
fn full_model_variants() {
    for (anchors, ln) in [(false, true), (true, false), (false, false)] {
        let err = model_error(EncodingKind::Dpe, anchors, ln);
        assert!(err < 1e-4, "anchors={anchors} ln={ln}: {err:e}");
    }
}
