use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use opml::fpvm::StepWitness;
use opml::merkle::{hash_leaf, MemTree};
use opml::ml::exec::{execute_native, node_vm};
use opml::ml::model_file;
use opml::ml::tensor::Tensor;
use opml_ffi::*;

const MODEL_DIGEST: &str = "eac47e101d762f94b3c39c421400145b4eb718ebc398a196a38c96a8dfd297d4";
const OUTPUT_DIGEST: &str = "b3a3ab7372658f6bd8964ff42f379b4397d8fc38941b771cbaeabd7dfa4f1c56";

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn load(name: &str) -> *mut OpmlModel {
    let path = CString::new(fixture(name).to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { opml_model_load_file(path.as_ptr(), &mut m) }, OpmlStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let p = opml_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

#[test]
fn model_digest_and_inference_match_golden() {
    let m = load("mlp_4_8_3.opml");
    let mut d = [0u8; 32];
    assert_eq!(unsafe { opml_model_digest(m, d.as_mut_ptr()) }, OpmlStatus::Ok);
    assert_eq!(hex(&d), MODEL_DIGEST);
    let mut nodes = 0usize;
    assert_eq!(unsafe { opml_model_node_count(m, &mut nodes) }, OpmlStatus::Ok);
    assert!(nodes > 1);

    let input = std::fs::read(fixture("mlp_4_8_3.input")).unwrap();
    let mut outputs = Vec::new();
    for engine in [OPML_ENGINE_NATIVE, OPML_ENGINE_NODE_VM, OPML_ENGINE_GRAPH_VM] {
        let mut buf = OpmlBuffer {
            data: ptr::null_mut(),
            len: 0,
        };
        let mut steps = u64::MAX;
        let st = unsafe { opml_infer(m, input.as_ptr(), input.len(), engine, &mut buf, &mut steps) };
        assert_eq!(st, OpmlStatus::Ok, "engine {engine}");
        let bytes = unsafe { std::slice::from_raw_parts(buf.data, buf.len) }.to_vec();
        unsafe { opml_buffer_free(buf) };
        assert_eq!(steps == 0, engine == OPML_ENGINE_NATIVE);
        outputs.push(Tensor::from_bytes(&bytes).unwrap());
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(outputs[0].digest().to_string(), OUTPUT_DIGEST);
    unsafe { opml_model_free(m) };
}

#[test]
fn in_memory_load_matches_file_load() {
    let bytes = std::fs::read(fixture("mlp_8_16_16_4.opml")).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { opml_model_load(bytes.as_ptr(), bytes.len(), &mut m) },
        OpmlStatus::Ok
    );
    let g = model_file::from_bytes(&bytes).unwrap();
    let mut d = [0u8; 32];
    unsafe { opml_model_digest(m, d.as_mut_ptr()) };
    assert_eq!(d, *model_file::model_digest(&g).as_bytes());
    unsafe { opml_model_free(m) };
}

#[test]
fn null_and_invalid_arguments_are_reported() {
    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { opml_model_load(ptr::null(), 4, &mut m) },
        OpmlStatus::NullPointer
    );
    assert!(last_error().contains("data"));
    assert_eq!(
        unsafe { opml_model_load(b"junk".as_ptr(), 4, &mut m) },
        OpmlStatus::Invalid
    );
    assert!(m.is_null());
    assert_eq!(
        unsafe { opml_model_digest(ptr::null(), [0u8; 32].as_mut_ptr()) },
        OpmlStatus::NullPointer
    );

    let missing = CString::new("/nonexistent/model.opml").unwrap();
    assert_eq!(
        unsafe { opml_model_load_file(missing.as_ptr(), &mut m) },
        OpmlStatus::Invalid
    );
    assert!(last_error().contains("/nonexistent/model.opml"));

    let bad = CString::new("md5").unwrap();
    assert_eq!(unsafe { opml_set_hash(bad.as_ptr()) }, OpmlStatus::Invalid);
    assert_eq!(unsafe { opml_set_hash(ptr::null()) }, OpmlStatus::NullPointer);

    let model = load("mlp_4_8_3.opml");
    let mut buf = OpmlBuffer {
        data: ptr::null_mut(),
        len: 0,
    };
    let st = unsafe { opml_infer(model, b"xx".as_ptr(), 2, OPML_ENGINE_NATIVE, &mut buf, ptr::null_mut()) };
    assert_eq!(st, OpmlStatus::Invalid);
    let input = std::fs::read(fixture("mlp_4_8_3.input")).unwrap();
    let st = unsafe { opml_infer(model, input.as_ptr(), input.len(), 9, &mut buf, ptr::null_mut()) };
    assert_eq!(st, OpmlStatus::Invalid);
    assert!(last_error().contains("engine"));
    unsafe { opml_model_free(model) };
    unsafe { opml_model_free(ptr::null_mut()) };
    unsafe {
        opml_buffer_free(OpmlBuffer {
            data: ptr::null_mut(),
            len: 0,
        })
    };
}

#[test]
fn verify_step_accepts_honest_and_rejects_tampered() {
    let bytes = std::fs::read(fixture("mlp_4_8_3.opml")).unwrap();
    let g = model_file::from_bytes(&bytes).unwrap();
    let x = Tensor::from_bytes(&std::fs::read(fixture("mlp_4_8_3.input")).unwrap()).unwrap();
    let run = execute_native(&g, &x).unwrap();
    let t = g.len() - 1;
    let ops: Vec<&Tensor> = g.node(t).inputs.iter().map(|&i| &run.outputs[i]).collect();
    let (mut vm, oracle) = node_vm(&g, t, &ops).unwrap();
    for _ in 0..7 {
        vm.step(&oracle).unwrap();
    }
    let w = vm.gen_step_witness(&oracle).unwrap();
    let mut next = vm.clone();
    next.step(&oracle).unwrap();
    let (pre, post) = (vm.state_root(), next.state_root());
    let enc = w.to_bytes();
    assert_eq!(StepWitness::from_bytes(&enc).unwrap(), w);

    let check = |pre: &[u8; 32], post: &[u8; 32], enc: &[u8]| {
        let mut ok = false;
        let st = unsafe { opml_verify_step(pre.as_ptr(), post.as_ptr(), enc.as_ptr(), enc.len(), true, &mut ok) };
        assert_eq!(st, OpmlStatus::Ok);
        ok
    };
    assert!(check(pre.as_bytes(), post.as_bytes(), &enc));
    assert!(!check(pre.as_bytes(), pre.as_bytes(), &enc));
    let mut flipped = enc.clone();
    let at = flipped.len() / 2;
    flipped[at] ^= 1;
    assert!(!check(pre.as_bytes(), post.as_bytes(), &flipped));
    assert!(!check(pre.as_bytes(), post.as_bytes(), &enc[..enc.len() - 1]));

    let mut ok = true;
    let st = unsafe {
        opml_verify_step(
            ptr::null(),
            post.as_bytes().as_ptr(),
            enc.as_ptr(),
            enc.len(),
            true,
            &mut ok,
        )
    };
    assert_eq!(st, OpmlStatus::NullPointer);
}

#[test]
fn merkle_proofs_round_trip() {
    let mut tree = MemTree::new();
    let leaf = [7u8; opml::merkle::LEAF_BYTES];
    tree.update_leaf(1234, leaf).unwrap();
    tree.update_leaf(99, [1u8; opml::merkle::LEAF_BYTES]).unwrap();
    let proof = tree.prove(1234, 0).unwrap().to_bytes();
    let (root, claimed) = (tree.root(), hash_leaf(&leaf));
    let verify = |claimed: &[u8; 32]| {
        let mut ok = false;
        let st = unsafe {
            opml_merkle_verify(
                root.as_bytes().as_ptr(),
                claimed.as_ptr(),
                proof.as_ptr(),
                proof.len(),
                &mut ok,
            )
        };
        assert_eq!(st, OpmlStatus::Ok);
        ok
    };
    assert!(verify(claimed.as_bytes()));
    assert!(!verify(&[0u8; 32]));
    let mut ok = false;
    let st = unsafe {
        opml_merkle_verify(
            root.as_bytes().as_ptr(),
            claimed.as_bytes().as_ptr(),
            proof.as_ptr(),
            3,
            &mut ok,
        )
    };
    assert_eq!(st, OpmlStatus::Invalid);
}

#[test]
fn economics_values() {
    let mut p = 0.0;
    assert_eq!(unsafe { opml_any_trust_prob(0.5, 3, &mut p) }, OpmlStatus::Ok);
    assert_eq!(p, 0.875);
    // m = 3, f = 1/2: at most two malicious, 1 - 0.5^3.
    assert_eq!(unsafe { opml_majority_trust_prob(0.5, 3, 0.5, &mut p) }, OpmlStatus::Ok);
    assert!((p - 0.875).abs() < 1e-12);
    assert_eq!(unsafe { opml_any_trust_prob(1.5, 3, &mut p) }, OpmlStatus::Invalid);

    let (mut pc, mut pv) = (0.0, 0.0);
    assert_eq!(
        unsafe { opml_verifier_equilibrium(1.0, 3.0, 1.0, 2.0, 8.0, &mut pc, &mut pv) },
        OpmlStatus::Ok
    );
    assert!(pc > 0.0 && pc < 1.0 && pv > 0.0 && pv < 1.0);

    let (mut g, mut pt, mut cost) = (0.0, 0.0, 0.0);
    assert_eq!(
        unsafe { opml_optimal_attention(0.001, 1.0, 0.001, &mut g, &mut pt, &mut cost) },
        OpmlStatus::Ok
    );
    assert!((g - 1.0).abs() < 1e-12 && (pt - 0.001).abs() < 1e-12 && (cost - 0.002).abs() < 1e-12);
    assert_eq!(
        unsafe { opml_optimal_attention(0.001, 1.0, 0.001, ptr::null_mut(), &mut pt, &mut cost) },
        OpmlStatus::NullPointer
    );
}

fn dispute(m: *mut OpmlModel, input: &[u8], cfg: &OpmlDisputeConfig) -> OpmlDisputeResult {
    let mut r = OpmlDisputeResult {
        winner: 99,
        rounds: 0,
        pinned_node: -2,
        pinned_step: -2,
    };
    let st = unsafe { opml_dispute_run(m, input.as_ptr(), input.len(), cfg, &mut r) };
    assert_eq!(st, OpmlStatus::Ok, "{}", last_error());
    r
}

fn config(protocol: u32, fault_node: i64, fault_step: u64) -> OpmlDisputeConfig {
    OpmlDisputeConfig {
        protocol,
        k: 1,
        m: 1,
        fault_node,
        fault_step,
        faulty: OPML_ROLE_SUBMITTER,
        submitter_strategy: ptr::null(),
        challenger_strategy: ptr::null(),
        seed: 7,
    }
}

#[test]
fn two_phase_dispute_pins_faulty_node() {
    let m = load("mlp_8_16_16_4.opml");
    let input = std::fs::read(fixture("mlp_8_16_16_4.input")).unwrap();

    let r = dispute(m, &input, &config(OPML_PROTOCOL_TWO_PHASE, 3, 0));
    assert_eq!(r.winner, OPML_ROLE_CHALLENGER);
    assert_eq!(r.pinned_node, 3);

    let r = dispute(m, &input, &config(OPML_PROTOCOL_TWO_PHASE, 5, 3));
    assert_eq!(r.winner, OPML_ROLE_CHALLENGER);
    assert_eq!((r.pinned_node, r.pinned_step), (5, 3));

    let mut cfg = config(OPML_PROTOCOL_TWO_PHASE, 5, 3);
    cfg.faulty = OPML_ROLE_CHALLENGER;
    assert_eq!(dispute(m, &input, &cfg).winner, OPML_ROLE_SUBMITTER);

    let r = dispute(m, &input, &config(OPML_PROTOCOL_SINGLE, -1, 0));
    assert_eq!(r.winner, OPML_ROLE_SUBMITTER);

    let silent = CString::new("silent:1").unwrap();
    let mut cfg = config(OPML_PROTOCOL_SINGLE, -1, 0);
    cfg.challenger_strategy = silent.as_ptr();
    assert_eq!(dispute(m, &input, &cfg).winner, OPML_ROLE_SUBMITTER);

    let bogus = CString::new("sometimes").unwrap();
    cfg.challenger_strategy = bogus.as_ptr();
    let mut r = OpmlDisputeResult {
        winner: 0,
        rounds: 0,
        pinned_node: 0,
        pinned_step: 0,
    };
    assert_eq!(
        unsafe { opml_dispute_run(m, input.as_ptr(), input.len(), &cfg, &mut r) },
        OpmlStatus::Invalid
    );
    let cfg = config(OPML_PROTOCOL_TWO_PHASE, 1000, 0);
    assert_eq!(
        unsafe { opml_dispute_run(m, input.as_ptr(), input.len(), &cfg, &mut r) },
        OpmlStatus::Invalid
    );
    unsafe { opml_model_free(m) };
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(opml_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
