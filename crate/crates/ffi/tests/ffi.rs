use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use orderlab::layer::forward;
use orderlab::training::{init_params, run_clp};
use orderlab::{Matrix, PruneSpec, Task, TrainConfig};
use orderlab_ffi::*;

fn last_error() -> String {
    let p = ol_last_error_message();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn new_layer(o: usize, h: usize, i: usize, t: usize, seed: u64) -> *mut OlLayer {
    let mut l = ptr::null_mut();
    assert_eq!(unsafe { ol_layer_new(o, h, i, t, false, seed, &mut l) }, OlStatus::Ok);
    assert!(!l.is_null());
    l
}

fn weights(l: *const OlLayer, n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n];
    assert_eq!(unsafe { ol_layer_weights(l, w.as_mut_ptr(), n) }, OlStatus::Ok);
    w
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(ol_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn layer_matches_the_library() {
    let l = new_layer(1, 5, 2, 3, 42);
    let mut shape = [0usize; 4];
    assert_eq!(unsafe { ol_layer_shape(l, shape.as_mut_ptr()) }, OlStatus::Ok);
    assert_eq!(shape, [1, 5, 2, 3]);

    let cfg = TrainConfig { seed: 42, ..TrainConfig::defaults(Task::Xor) };
    let params = init_params(&cfg).unwrap();
    assert_eq!(weights(l, 6 * 8), params.weights.as_slice());

    let x = [0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
    let mut y = [0.0; 4];
    assert_eq!(unsafe { ol_layer_forward(l, x.as_ptr(), 4, y.as_mut_ptr(), 4) }, OlStatus::Ok);
    let (expected, _) = forward(&cfg.shape, &params, &Matrix::from_vec(4, 2, x.to_vec()).unwrap(), false).unwrap();
    assert_eq!(&y[..], expected.as_slice());

    let mut short = [0.0; 3];
    assert_eq!(unsafe { ol_layer_forward(l, x.as_ptr(), 4, short.as_mut_ptr(), 3) }, OlStatus::Dimension);
    assert!(last_error().contains("need 4"));
    unsafe { ol_layer_free(l) };
}

#[test]
fn orderedness_of_set_weights() {
    let l = new_layer(1, 3, 2, 1, 0);
    let n = 4 * 6;
    let mut w = vec![0.0; n];
    // feed-forward chain in0 -> hid2 -> hid0 -> out0 plus a backward edge hid0 -> hid1
    w[3 * 6 + 4] = 1.0;
    w[6 + 3] = 1.0;
    w[1] = 1.0;
    w[2 * 6 + 1] = 0.5;
    assert_eq!(unsafe { ol_layer_set_weights(l, w.as_ptr(), n) }, OlStatus::Ok);
    assert_eq!(weights(l, n), w);

    let (mut o, mut perm) = (0.0, [9usize; 3]);
    let st = unsafe { ol_layer_orderedness(l, OlMassScope::Recurrent, &mut o, perm.as_mut_ptr(), 3) };
    assert_eq!(st, OlStatus::Ok);
    assert_eq!(o, 1.0);
    let mut sorted = perm;
    sorted.sort_unstable();
    assert_eq!(sorted, [0, 1, 2]);

    let mut dense = 0.0;
    assert_eq!(unsafe { ol_orderedness_dense(w.as_ptr(), 1, 3, 2, OlMassScope::Full, &mut dense) }, OlStatus::Ok);
    assert_eq!(dense, 1.0);

    let st = unsafe { ol_layer_orderedness(l, OlMassScope::Recurrent, &mut o, perm.as_mut_ptr(), 2) };
    assert_eq!(st, OlStatus::Dimension);
    assert_eq!(unsafe { ol_layer_set_weights(l, w.as_ptr(), n - 1) }, OlStatus::Dimension);
    w[0] = f64::NAN;
    assert_eq!(unsafe { ol_layer_set_weights(l, w.as_ptr(), n) }, OlStatus::InvalidArgument);
    unsafe { ol_layer_free(l) };
}

#[test]
fn dense_orderedness_agrees_with_library() {
    let mut rng = orderlab::SeededRng::new(5);
    let w = orderlab::numerics::randn(&mut rng, 6, 8).unwrap();
    let shape = orderlab::LayerShape::new(1, 5, 2, 1).unwrap();
    let expected = orderlab::orderedness::orderedness(&w, &shape).unwrap().orderedness;
    let mut o = 0.0;
    let st = unsafe { ol_orderedness_dense(w.as_slice().as_ptr(), 1, 5, 2, OlMassScope::Recurrent, &mut o) };
    assert_eq!(st, OlStatus::Ok);
    assert_eq!(o, expected);
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("c.txt").to_str().unwrap()).unwrap();
    let l = new_layer(2, 4, 3, 2, 9);
    assert_eq!(unsafe { ol_layer_save_checkpoint(l, path.as_ptr()) }, OlStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { ol_layer_load_checkpoint(path.as_ptr(), &mut back) }, OlStatus::Ok);
    assert_eq!(weights(back, 6 * 9), weights(l, 6 * 9));
    unsafe {
        ol_layer_free(back);
        ol_layer_free(l);
    }

    let missing = CString::new(dir.path().join("none.txt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ol_layer_load_checkpoint(missing.as_ptr(), &mut back) }, OlStatus::Io);
    assert!(last_error().contains("none.txt"));
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "not a checkpoint\n").unwrap();
    let bad = CString::new(bad.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ol_layer_load_checkpoint(bad.as_ptr(), &mut back) }, OlStatus::Parse);
}

#[test]
fn null_and_invalid_arguments() {
    assert_eq!(unsafe { ol_layer_new(1, 2, 2, 1, false, 0, ptr::null_mut()) }, OlStatus::NullPointer);
    assert!(last_error().contains("out"));
    let mut l = ptr::null_mut();
    assert_ne!(unsafe { ol_layer_new(0, 2, 2, 1, false, 0, &mut l) }, OlStatus::Ok);
    assert!(l.is_null());
    let mut o = 0.0;
    assert_eq!(unsafe { ol_layer_orderedness(ptr::null(), OlMassScope::Recurrent, &mut o, ptr::null_mut(), 0) }, OlStatus::NullPointer);
    assert_eq!(unsafe { ol_layer_load_checkpoint(ptr::null(), &mut l) }, OlStatus::NullPointer);
    unsafe { ol_layer_free(ptr::null_mut()) };

    let good = new_layer(1, 1, 1, 1, 0);
    let mut shape = [0usize; 4];
    assert_eq!(unsafe { ol_layer_shape(good, shape.as_mut_ptr()) }, OlStatus::Ok);
    assert!(ol_last_error_message().is_null());
    unsafe { ol_layer_free(good) };
}

#[test]
fn schedule_functions() {
    assert_eq!(ol_dyn_topk_fraction(0.5, 0.0), 1.0);
    assert_eq!(ol_dyn_topk_fraction(0.3, 1.0), 0.3);
    assert!((ol_dyn_topk_fraction(0.5, 0.5) - 0.875).abs() < 1e-12);
    assert_eq!(ol_dyn_tril_fraction(0.8, 0.0), 0.0);
    assert_eq!(ol_dyn_tril_fraction(0.8, 1.0), 0.8);
    assert!((ol_dyn_tril_fraction(0.8, 0.5) - 0.2).abs() < 1e-12);
    assert!(ol_dyn_topk_fraction(0.5, 1.5).is_nan());
    assert!(ol_dyn_tril_fraction(0.5, -0.1).is_nan());
}

#[test]
fn train_summary_matches_library() {
    let task = CString::new("xor").unwrap();
    let prune = CString::new("dyntopk:0.5").unwrap();
    let mut summary = OlRunSummary { final_loss: 0.0, o_pre: 0.0, o_post: 0.0, delta_o: 0.0, steps_run: 0, diverged: true };
    let mut layer = ptr::null_mut();
    let st = unsafe { ol_train(task.as_ptr(), prune.as_ptr(), 4, 150, &mut summary, &mut layer) };
    assert_eq!(st, OlStatus::Ok);
    let cfg = TrainConfig { seed: 4, steps: 150, prune: PruneSpec::DynTopK(0.5), ..TrainConfig::defaults(Task::Xor) };
    let (rec, params) = run_clp(&cfg).unwrap();
    assert_eq!(summary.final_loss, rec.final_loss.unwrap());
    assert_eq!(summary.delta_o, rec.delta_o.unwrap());
    assert_eq!(summary.steps_run, 150);
    assert!(!summary.diverged);
    assert_eq!(weights(layer, 48), params.effective_weights().as_slice());
    unsafe { ol_layer_free(layer) };

    let bad = CString::new("topk:2").unwrap();
    assert_eq!(unsafe { ol_train(task.as_ptr(), bad.as_ptr(), 0, 0, &mut summary, ptr::null_mut()) }, OlStatus::InvalidArgument);
    assert!(last_error().contains("topk"));
}

fn exported_functions() -> Vec<String> {
    let src = include_str!("../src/lib.rs");
    src.lines()
        .filter_map(|l| l.trim().split_once("extern \"C\" fn ").map(|(_, rest)| rest))
        .map(|rest| rest.split('(').next().unwrap().to_string())
        .collect()
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/orderlab.h")).unwrap();
    let names = exported_functions();
    assert!(names.len() >= 14, "{names:?}");
    for name in &names {
        assert!(header.contains(&format!(" {name}(")) || header.contains(&format!("*{name}(")), "{name} missing from header");
    }
    for ty in ["typedef struct OlLayer OlLayer;", "typedef enum OlStatus", "typedef struct OlRunSummary", "OL_STATUS_NULL_POINTER = 1"] {
        assert!(header.contains(ty), "{ty}");
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"orderlab.h\"\n\
         int main(void) {\n\
           OlLayer *l = NULL;\n\
           OlRunSummary s;\n\
           double o;\n\
           if (ol_layer_new(1, 3, 2, 3, false, 7, &l) != OL_STATUS_OK) return 1;\n\
           ol_layer_orderedness(l, OL_MASS_SCOPE_RECURRENT, &o, NULL, 0);\n\
           ol_train(\"xor\", \"none\", 0, 10, &s, NULL);\n\
           ol_layer_free(l);\n\
           return ol_last_error_message() == NULL ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = match Command::new(&cc).args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"]).arg(&include).arg(&src).output() {
        Ok(out) => out,
        Err(e) => {
            eprintln!("skipping C compile check: cannot run {cc}: {e}");
            return;
        }
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
