//! C ABI over `opml-core`.
//!
//! Every function returns an [`OpmlStatus`]; on failure a message is kept
//! per thread and read with [`opml_last_error`]. Digests are 32-byte
//! buffers. Buffers handed out by the library are released with
//! [`opml_buffer_free`], models with [`opml_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use opml::dispute::{ChainSim, GameParams, Role, Strategy, Transcript};
use opml::economics::{
    any_trust_prob, majority_trust_prob, optimal_attention, verifier_equilibrium, GamePayoffs, SecurityParams,
};
use opml::fpvm::{verify_step, StepWitness};
use opml::hash::{self, Digest, HashKind};
use opml::merkle::{self, MerkleProof};
use opml::ml::exec::{execute_graph_vm, execute_native, execute_via_vm, ExecError};
use opml::ml::graph::Graph;
use opml::ml::model_file::{self, model_digest};
use opml::ml::tensor::Tensor;
use opml::multiphase::{run_single_phase_dispute, run_two_phase_dispute, NodeFault, PartyConfig};
use opml::rng;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpmlStatus {
    Ok = 0,
    NullPointer = 1,
    Invalid = 2,
    Io = 3,
    Internal = 4,
}

/// Loaded model. Opaque to C.
pub struct OpmlModel {
    graph: Graph,
}

/// Library-owned bytes.
#[repr(C)]
pub struct OpmlBuffer {
    pub data: *mut u8,
    pub len: usize,
}

pub const OPML_ENGINE_NATIVE: u32 = 0;
pub const OPML_ENGINE_NODE_VM: u32 = 1;
pub const OPML_ENGINE_GRAPH_VM: u32 = 2;

pub const OPML_PROTOCOL_SINGLE: u32 = 0;
pub const OPML_PROTOCOL_TWO_PHASE: u32 = 1;

pub const OPML_ROLE_SUBMITTER: u32 = 0;
pub const OPML_ROLE_CHALLENGER: u32 = 1;

#[repr(C)]
pub struct OpmlDisputeConfig {
    pub protocol: u32,
    pub k: u64,
    pub m: u64,
    /// Node whose output the faulty party corrupts; negative for none.
    pub fault_node: i64,
    /// 1-based VM step within the faulty node; 0 leaves the VM run intact
    /// (two-phase) or diverges at the node's first step (single).
    pub fault_step: u64,
    pub faulty: u32,
    /// Strategy strings such as "honest" or "silent:3"; NULL means honest.
    pub submitter_strategy: *const c_char,
    pub challenger_strategy: *const c_char,
    pub seed: u64,
}

#[repr(C)]
pub struct OpmlDisputeResult {
    pub winner: u32,
    pub rounds: u32,
    /// -1 when no node was pinned.
    pub pinned_node: i64,
    /// -1 when no VM step was pinned.
    pub pinned_step: i64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Error {
    status: OpmlStatus,
    msg: String,
}

type Res<T> = Result<T, Error>;

fn invalid(msg: impl Into<String>) -> Error {
    Error {
        status: OpmlStatus::Invalid,
        msg: msg.into(),
    }
}

fn null(what: &str) -> Error {
    Error {
        status: OpmlStatus::NullPointer,
        msg: format!("{what} is null"),
    }
}

impl From<ExecError> for Error {
    fn from(e: ExecError) -> Self {
        let status = match e {
            ExecError::Graph(_) => OpmlStatus::Invalid,
            _ => OpmlStatus::Internal,
        };
        Error {
            status,
            msg: e.to_string(),
        }
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Res<()>) -> OpmlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OpmlStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(&e.msg);
            e.status
        }
        Err(_) => {
            set_last_error("internal panic");
            OpmlStatus::Internal
        }
    }
}

unsafe fn bytes<'a>(p: *const u8, len: usize, what: &str) -> Res<&'a [u8]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn digest(p: *const u8, what: &str) -> Res<Digest> {
    let b = bytes(p, 32, what)?;
    Ok(Digest(b.try_into().expect("32 bytes")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Res<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Res<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn model<'a>(m: *const OpmlModel) -> Res<&'a Graph> {
    m.as_ref().map(|m| &m.graph).ok_or_else(|| null("model"))
}

fn buffer(v: Vec<u8>) -> OpmlBuffer {
    let b = v.into_boxed_slice();
    let len = b.len();
    OpmlBuffer {
        data: Box::into_raw(b) as *mut u8,
        len,
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn opml_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn opml_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Selects the process-wide commitment hash: "sha256" or "keccak256".
///
/// # Safety
/// `name` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn opml_set_hash(name: *const c_char) -> OpmlStatus {
    guard(|| {
        let kind: HashKind = text(name, "name")?
            .parse()
            .map_err(|e: hash::UnknownHash| invalid(e.to_string()))?;
        hash::set_active(kind);
        Ok(())
    })
}

/// Parses a model from its file encoding.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn opml_model_load(data: *const u8, len: usize, out_model: *mut *mut OpmlModel) -> OpmlStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let graph = model_file::from_bytes(bytes(data, len, "data")?).map_err(|e| invalid(e.to_string()))?;
        *slot = Box::into_raw(Box::new(OpmlModel { graph }));
        Ok(())
    })
}

/// Reads and parses a model file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn opml_model_load_file(path: *const c_char, out_model: *mut *mut OpmlModel) -> OpmlStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let path = text(path, "path")?;
        let data = std::fs::read(path).map_err(|e| Error {
            status: if e.kind() == std::io::ErrorKind::NotFound {
                OpmlStatus::Invalid
            } else {
                OpmlStatus::Io
            },
            msg: format!("{path}: {e}"),
        })?;
        let graph = model_file::from_bytes(&data).map_err(|e| invalid(format!("{path}: {e}")))?;
        *slot = Box::into_raw(Box::new(OpmlModel { graph }));
        Ok(())
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from a load function and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn opml_model_free(model: *mut OpmlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` must have room for 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn opml_model_digest(model: *const OpmlModel, out_digest: *mut u8) -> OpmlStatus {
    guard(|| {
        let g = self::model(model)?;
        if out_digest.is_null() {
            return Err(null("out_digest"));
        }
        ptr::copy_nonoverlapping(model_digest(g).as_bytes().as_ptr(), out_digest, 32);
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `out_nodes` writable.
#[no_mangle]
pub unsafe extern "C" fn opml_model_node_count(model: *const OpmlModel, out_nodes: *mut usize) -> OpmlStatus {
    guard(|| {
        *out(out_nodes, "out_nodes")? = self::model(model)?.len();
        Ok(())
    })
}

/// Runs inference on a serialized input tensor with one of the
/// `OPML_ENGINE_*` engines and returns the serialized output. `out_steps`
/// (optional) receives the VM step count, 0 for the native engine.
///
/// # Safety
/// `input` must point to `input_len` readable bytes; `out_tensor` must be
/// writable; `out_steps` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn opml_infer(
    model: *const OpmlModel,
    input: *const u8,
    input_len: usize,
    engine: u32,
    out_tensor: *mut OpmlBuffer,
    out_steps: *mut u64,
) -> OpmlStatus {
    guard(|| {
        let g = self::model(model)?;
        let slot = out(out_tensor, "out_tensor")?;
        let x = Tensor::from_bytes(bytes(input, input_len, "input")?).map_err(|e| invalid(e.to_string()))?;
        let (t, steps) = match engine {
            OPML_ENGINE_NATIVE => (execute_native(g, &x)?.output().clone(), 0),
            OPML_ENGINE_NODE_VM => {
                let r = execute_via_vm(g, &x)?;
                (r.output, r.node_steps.iter().sum())
            }
            OPML_ENGINE_GRAPH_VM => execute_graph_vm(g, &x)?,
            other => return Err(invalid(format!("unknown engine {other}"))),
        };
        *slot = buffer(t.to_bytes());
        if let Some(s) = out_steps.as_mut() {
            *s = steps;
        }
        Ok(())
    })
}

/// Releases a buffer returned by the library. An empty buffer is ignored.
///
/// # Safety
/// `buf` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn opml_buffer_free(buf: OpmlBuffer) {
    if !buf.data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(buf.data, buf.len)));
    }
}

/// One-step arbitration: `accepted` is set iff the encoded witness replays
/// from `pre` to `post`. A witness that fails to decode is rejected, not an
/// error.
///
/// # Safety
/// `pre` and `post` must point to 32 bytes, `witness` to `len` bytes and
/// `accepted` must be writable.
#[no_mangle]
pub unsafe extern "C" fn opml_verify_step(
    pre: *const u8,
    post: *const u8,
    witness: *const u8,
    len: usize,
    check_preimage: bool,
    accepted: *mut bool,
) -> OpmlStatus {
    guard(|| {
        let slot = out(accepted, "accepted")?;
        let (pre, post) = (digest(pre, "pre")?, digest(post, "post")?);
        *slot = match StepWitness::from_bytes(bytes(witness, len, "witness")?) {
            Ok(w) => verify_step(&pre, &post, &w, check_preimage).is_accept(),
            Err(_) => false,
        };
        Ok(())
    })
}

/// Checks an encoded Merkle proof that `claimed` (a hashed leaf or subtree
/// root) sits under `root`.
///
/// # Safety
/// `root` and `claimed` must point to 32 bytes, `proof` to `len` bytes and
/// `ok` must be writable.
#[no_mangle]
pub unsafe extern "C" fn opml_merkle_verify(
    root: *const u8,
    claimed: *const u8,
    proof: *const u8,
    len: usize,
    ok: *mut bool,
) -> OpmlStatus {
    guard(|| {
        let slot = out(ok, "ok")?;
        let p = MerkleProof::from_bytes(bytes(proof, len, "proof")?).map_err(|e| invalid(e.to_string()))?;
        *slot = merkle::verify(&digest(root, "root")?, &digest(claimed, "claimed")?, &p);
        Ok(())
    })
}

/// `1 - p^m`.
///
/// # Safety
/// `out_prob` must be writable.
#[no_mangle]
pub unsafe extern "C" fn opml_any_trust_prob(p: f64, m: u32, out_prob: *mut f64) -> OpmlStatus {
    guard(|| {
        *out(out_prob, "out_prob")? = any_trust_prob(p, m).map_err(|e| invalid(e.to_string()))?;
        Ok(())
    })
}

/// Probability that at most `ceil(f·m)` of `m` validators are malicious.
///
/// # Safety
/// `out_prob` must be writable.
#[no_mangle]
pub unsafe extern "C" fn opml_majority_trust_prob(p: f64, m: u32, f: f64, out_prob: *mut f64) -> OpmlStatus {
    guard(|| {
        let params = SecurityParams::new(p, m, f).map_err(|e| invalid(e.to_string()))?;
        *out(out_prob, "out_prob")? = majority_trust_prob(&params);
        Ok(())
    })
}

/// Mixed equilibrium of the verification game. Values above one mean no
/// interior equilibrium exists.
///
/// # Safety
/// `p_c` and `p_v` must be writable.
#[no_mangle]
pub unsafe extern "C" fn opml_verifier_equilibrium(
    c: f64,
    r: f64,
    l: f64,
    b: f64,
    s: f64,
    p_c: *mut f64,
    p_v: *mut f64,
) -> OpmlStatus {
    guard(|| {
        let (pc, pv) = (out(p_c, "p_c")?, out(p_v, "p_v")?);
        let g = GamePayoffs::new(c, r, l, b, s).map_err(|e| invalid(e.to_string()))?;
        let e = verifier_equilibrium(&g).map_err(|e| invalid(e.to_string()))?;
        (*pc, *pv) = (e.p_c, e.p_v);
        Ok(())
    })
}

/// Cheapest attention penalty `g` and response probability `p_t`.
///
/// # Safety
/// The three out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn opml_optimal_attention(
    r: f64,
    t: f64,
    c: f64,
    g: *mut f64,
    p_t: *mut f64,
    cost: *mut f64,
) -> OpmlStatus {
    guard(|| {
        let (g, p_t, cost) = (out(g, "g")?, out(p_t, "p_t")?, out(cost, "cost")?);
        let o = optimal_attention(r, t, c).map_err(|e| invalid(e.to_string()))?;
        (*g, *p_t, *cost) = (o.g, o.p_t, o.cost);
        Ok(())
    })
}

unsafe fn strategy(p: *const c_char, what: &str) -> Res<Strategy> {
    if p.is_null() {
        return Ok(Strategy::Honest);
    }
    text(p, what)?
        .parse()
        .map_err(|e: opml::dispute::StrategyParseError| invalid(e.to_string()))
}

/// Plays a dispute over inference of `model` on `input`. Seeds derive the
/// same way as in the `opml dispute` command, so verdicts match it.
///
/// # Safety
/// `model` must be a live handle, `input` must point to `input_len` bytes,
/// `config` must be readable and `result` writable.
#[no_mangle]
pub unsafe extern "C" fn opml_dispute_run(
    model: *const OpmlModel,
    input: *const u8,
    input_len: usize,
    config: *const OpmlDisputeConfig,
    result: *mut OpmlDisputeResult,
) -> OpmlStatus {
    guard(|| {
        let g = self::model(model)?;
        let cfg = config.as_ref().ok_or_else(|| null("config"))?;
        let res = out(result, "result")?;
        let x = Tensor::from_bytes(bytes(input, input_len, "input")?).map_err(|e| invalid(e.to_string()))?;
        g.check_input(&x).map_err(|e| invalid(e.to_string()))?;
        if cfg.k == 0 || cfg.m == 0 {
            return Err(invalid("k and m must be at least 1"));
        }
        let fault = match cfg.fault_node {
            n if n < 0 => None,
            n if n as u64 >= g.len() as u64 => return Err(invalid(format!("fault node {n} out of range"))),
            n => Some(NodeFault {
                node: n as usize,
                vm_step: (cfg.fault_step > 0).then_some(cfg.fault_step),
            }),
        };
        let faulty = match cfg.faulty {
            OPML_ROLE_SUBMITTER => Role::Submitter,
            OPML_ROLE_CHALLENGER => Role::Challenger,
            other => return Err(invalid(format!("unknown role {other}"))),
        };
        let party = |role: Role, id: u32, s: Strategy, label: &str| PartyConfig {
            party: id,
            strategy: s,
            fault: if role == faulty { fault } else { None },
            seed: rng::derive(cfg.seed, label),
        };
        let sub = party(
            Role::Submitter,
            1,
            strategy(cfg.submitter_strategy, "submitter_strategy")?,
            "party/submitter",
        );
        let chal = party(
            Role::Challenger,
            2,
            strategy(cfg.challenger_strategy, "challenger_strategy")?,
            "party/challenger",
        );
        let params = GameParams {
            k: cfg.k,
            m: cfg.m,
            ..GameParams::default()
        };
        let mut chain = ChainSim::new();
        chain.fund(1, 400);
        chain.fund(2, 400);
        let mut log = Transcript::new();
        let internal = |e: opml::multiphase::MultiphaseError| Error {
            status: OpmlStatus::Internal,
            msg: e.to_string(),
        };
        let (winner, rounds, node, step) = match cfg.protocol {
            OPML_PROTOCOL_SINGLE => {
                let o = run_single_phase_dispute(g, &x, &sub, &chal, &params, 100, &mut chain, &mut log)
                    .map_err(internal)?;
                (o.dispute.winner, o.dispute.rounds, o.pinned_node, o.dispute.pinned_step)
            }
            OPML_PROTOCOL_TWO_PHASE => {
                let o =
                    run_two_phase_dispute(g, &x, &sub, &chal, &params, 100, &mut chain, &mut log).map_err(internal)?;
                (o.winner, o.rounds(), o.pinned_node, o.pinned_step)
            }
            other => return Err(invalid(format!("unknown protocol {other}"))),
        };
        *res = OpmlDisputeResult {
            winner: match winner {
                Role::Submitter => OPML_ROLE_SUBMITTER,
                Role::Challenger => OPML_ROLE_CHALLENGER,
            },
            rounds,
            pinned_node: node.map_or(-1, |n| n as i64),
            pinned_step: step.map_or(-1, |s| s as i64),
        };
        Ok(())
    })
}
