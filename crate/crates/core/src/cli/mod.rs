//! The `opml` command line. [`run`] parses arguments, executes one command
//! and writes its report to `out`; errors carry the process exit code.

mod config;

use std::ffi::OsString;
use std::fmt::Display;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;

pub use config::ConfigError;

use crate::dispute::{
    arbitrate, run_dispute, synthetic_vm, Actor, Amount, ChainSim, EndReason, GameParams, Pinned, Record, Role,
    Strategy, Transcript, VmTrace,
};
use crate::economics::{
    attention_round, optimal_attention, payoff, security_row, threshold, verifier_equilibrium, GamePayoffs,
    SecurityParams, SubmitterAction, Validator, ValidatorAction,
};
use crate::fpvm::{PreimageOracle, StepWitness};
use crate::hash::{self, Digest, HashKind};
use crate::ml::exec::{execute_native, graph_vm, read_output, ExecError, VM_STEP_BUDGET};
use crate::ml::graph::{random_input, random_mlp, Graph};
use crate::ml::lower::GraphProgram;
use crate::ml::model_file::{self, model_digest};
use crate::ml::tensor::Tensor;
use crate::multiphase::{
    complexity_report, node_at_step, node_start_steps, run_two_phase_dispute, single_phase_trace, MultiphaseError,
    NodeFault, PartyConfig,
};
use crate::rng;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_INTERNAL: u8 = 4;

const SUBMITTER: u32 = 1;
const CHALLENGER: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{msg}")]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            msg: msg.into(),
        }
    }

    pub fn io(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_IO,
            msg: msg.into(),
        }
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INTERNAL,
            msg: msg.into(),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

impl From<ExecError> for CliError {
    fn from(e: ExecError) -> Self {
        match e {
            ExecError::Graph(g) => CliError::usage(g.to_string()),
            other => CliError::internal(other.to_string()),
        }
    }
}

impl From<MultiphaseError> for CliError {
    fn from(e: MultiphaseError) -> Self {
        match e {
            MultiphaseError::Exec(e) => e.into(),
            e @ MultiphaseError::FaultNode { .. } => CliError::usage(e.to_string()),
            other => CliError::internal(other.to_string()),
        }
    }
}

fn internal(e: impl Display) -> CliError {
    CliError::internal(e.to_string())
}

#[derive(Parser, Debug)]
#[command(
    name = "opml",
    version,
    about = "Optimistic ML fraud proofs: inference claims, dispute games and their economics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run inference and print the claim (model, input and output digests, trace length).
    Run(RunArgs),
    /// Play a dispute between a submitter and a challenger and print the verdict.
    Dispute(Box<DisputeArgs>),
    /// AnyTrust and majority-trust security probabilities as CSV.
    Security(SecurityArgs),
    /// Incentive analysis of the verification game.
    #[command(subcommand)]
    Economics(EconomicsCmd),
    /// Re-run the arbitration records of a dispute transcript offline.
    VerifyWitness(VerifyArgs),
    /// Trace sizes and round counts of the single- and two-phase games.
    Complexity(ComplexityArgs),
    /// Write a random fully connected model.
    GenModel(GenModelArgs),
    /// Write a random input tensor for a model.
    GenInput(GenInputArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Where to write the serialized output tensor.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write `step_count, pc, state_root` lines of the whole-graph VM run.
    #[arg(long)]
    dump_trace: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Protocol {
    Single,
    TwoPhase,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Party {
    Submitter,
    Challenger,
}

#[derive(Args, Debug, Default)]
struct DisputeArgs {
    /// Scenario file of `key = value` lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Dispute over a generated straight-line program of N steps instead of a model.
    #[arg(long, value_name = "N")]
    synthetic: Option<u64>,
    #[arg(long, value_enum)]
    protocol: Option<Protocol>,
    #[arg(long)]
    k: Option<u64>,
    #[arg(long)]
    m: Option<u64>,
    /// Graph node whose output the faulty party corrupts.
    #[arg(long)]
    fault_node: Option<usize>,
    /// VM step (1-based) from which the faulty party's trace diverges. With
    /// --fault-node it counts from the node's first step.
    #[arg(long)]
    fault_step: Option<u64>,
    #[arg(long, value_enum)]
    faulty: Option<Party>,
    /// honest, fault:S, wrong-midpoint:R, silent:R or random:SEED
    #[arg(long)]
    submitter: Option<Strategy>,
    #[arg(long)]
    challenger: Option<Strategy>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    challenge_period: Option<u64>,
    /// Ticks a party may stay silent before forfeiting.
    #[arg(long)]
    deadline: Option<u64>,
    #[arg(long)]
    stake: Option<Amount>,
    /// Write the JSON-lines transcript here.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Take the trace length from the model run (the default for model scenarios).
    #[arg(long)]
    n_from_model: bool,
    /// Skip preimage checks during arbitration.
    #[arg(long)]
    no_preimage_check: bool,
}

#[derive(Args, Debug)]
struct SecurityArgs {
    /// Malicious probability per validator; comma-separated list allowed.
    #[arg(long, default_value = "0.5")]
    p: String,
    /// Validator count: `10`, a list `1,5,10` or a range `1..20`.
    #[arg(long, default_value = "10")]
    m: String,
    /// Fault fraction a majority-trust system tolerates.
    #[arg(long, default_value_t = 0.5)]
    f: f64,
}

#[derive(Subcommand, Debug)]
enum EconomicsCmd {
    /// Payoff matrix and mixed equilibrium of the verification game.
    Equilibrium {
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 3.0)]
        r: f64,
        #[arg(long, default_value_t = 1.0)]
        l: f64,
        #[arg(long, default_value_t = 2.0)]
        b: f64,
        #[arg(long, default_value_t = 8.0)]
        s: f64,
    },
    /// Cheapest penalty G and response probability p_t; lists give one row per combination.
    Attention {
        #[arg(long, default_value = "0.001")]
        r: String,
        #[arg(long, default_value = "1")]
        t: String,
        #[arg(long, default_value = "0.001")]
        c: String,
    },
    /// Attention-challenge rounds on the simulated chain.
    Simulate {
        #[arg(long, default_value_t = 10_000)]
        rounds: u32,
        #[arg(long, default_value_t = 0.1)]
        p_t: f64,
        #[arg(long, default_value_t = 1)]
        validators: u32,
        /// Validators respond when selected instead of skipping the work.
        #[arg(long)]
        diligent: bool,
        #[arg(long, default_value_t = 10)]
        penalty: Amount,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    transcript: PathBuf,
    #[arg(long)]
    no_preimage_check: bool,
}

#[derive(Args, Debug)]
struct ComplexityArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 1)]
    k: u64,
    #[arg(long, default_value_t = 1)]
    m: u64,
}

#[derive(Args, Debug)]
struct GenModelArgs {
    /// Layer widths, input first, e.g. `4,8,3`.
    #[arg(long)]
    dims: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    argmax: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenInputArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Runs one command. `args` includes the program name.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                write!(out, "{e}")?;
                return Ok(());
            }
            return Err(CliError::usage(e.render().to_string().trim_end()));
        }
    };
    let kind = HashKind::from_env().map_err(|e| CliError::usage(e.to_string()))?;
    hash::set_active(kind);
    match cli.command {
        Command::Run(a) => cmd_run(&a, out),
        Command::Dispute(a) => cmd_dispute(*a, out),
        Command::Security(a) => cmd_security(&a, out),
        Command::Economics(c) => cmd_economics(&c, out),
        Command::VerifyWitness(a) => cmd_verify_witness(&a, out),
        Command::Complexity(a) => cmd_complexity(&a, out),
        Command::GenModel(a) => cmd_gen_model(&a, out),
        Command::GenInput(a) => cmd_gen_input(&a, out),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => CliError::usage(format!("{}: no such file", path.display())),
        _ => CliError::io(format!("{}: {e}", path.display())),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Graph, CliError> {
    let bytes = read_file(path)?;
    model_file::from_bytes(&bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn load_input(path: &Path, graph: &Graph) -> Result<Tensor, CliError> {
    let bytes = read_file(path)?;
    let t = Tensor::from_bytes(&bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    graph
        .check_input(&t)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok(t)
}

fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let graph = load_model(&a.model)?;
    let input = load_input(&a.input, &graph)?;
    let native = execute_native(&graph, &input)?;
    let (vm, _) = graph_vm(&graph, &input)?;
    let oracle = PreimageOracle::new();
    let (final_state, steps) = match &a.dump_trace {
        None => {
            let r = vm.run(&oracle, VM_STEP_BUDGET).map_err(internal)?;
            (r.state, r.steps)
        }
        Some(path) => {
            let mut text = String::new();
            let mut s = vm;
            let mut steps = 0u64;
            text.push_str(&format!("0, {:#010x}, {}\n", s.pc(), s.state_root()));
            while !s.exited() {
                if steps >= VM_STEP_BUDGET {
                    return Err(CliError::internal("vm step budget exceeded"));
                }
                s.step(&oracle).map_err(internal)?;
                steps += 1;
                text.push_str(&format!("{steps}, {:#010x}, {}\n", s.pc(), s.state_root()));
            }
            write_file(path, text.as_bytes())?;
            (s, steps)
        }
    };
    let vm_out = read_output(&final_state, graph.shape(graph.output_id()))?;
    if vm_out != *native.output() {
        return Err(CliError::internal("native and vm outputs differ"));
    }
    if let Some(path) = &a.output {
        write_file(path, &vm_out.to_bytes())?;
    }
    writeln!(out, "model={}", model_digest(&graph))?;
    writeln!(out, "input={}", input.digest())?;
    writeln!(out, "output={}", vm_out.digest())?;
    writeln!(out, "trace_len={steps}")?;
    writeln!(
        out,
        "commitment={}",
        native.commitments.last().expect("S_0 always present")
    )?;
    Ok(())
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    v.parse().map_err(|e| CliError::usage(format!("{key}: {e}")))
}

fn fill<T>(slot: &mut Option<T>, v: T) {
    if slot.is_none() {
        *slot = Some(v);
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::usage(format!("{key}: expected true or false, got `{v}`"))),
    }
}

/// Fills every flag left unset from the scenario file at `path`. Relative
/// paths in the file resolve against its directory.
fn apply_config(a: &mut DisputeArgs, path: &Path) -> Result<(), CliError> {
    let text =
        String::from_utf8(read_file(path)?).map_err(|_| CliError::usage(format!("{}: not UTF-8", path.display())))?;
    let map = config::parse(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let resolve = |v: &str| dir.join(v);
    for (key, (line, v)) in map {
        let v = v.as_str();
        let k = key.as_str();
        match k {
            "model" => fill(&mut a.model, resolve(v)),
            "input" => fill(&mut a.input, resolve(v)),
            "transcript" => fill(&mut a.transcript, resolve(v)),
            "synthetic" => fill(&mut a.synthetic, parse_value(k, v)?),
            "protocol" => fill(
                &mut a.protocol,
                Protocol::from_str(v, true).map_err(|e| CliError::usage(format!("{k}: {e}")))?,
            ),
            "phases" => fill(
                &mut a.protocol,
                match v {
                    "1" => Protocol::Single,
                    "2" => Protocol::TwoPhase,
                    _ => return Err(CliError::usage(format!("phases: expected 1 or 2, got `{v}`"))),
                },
            ),
            "k" => fill(&mut a.k, parse_value(k, v)?),
            "m" => fill(&mut a.m, parse_value(k, v)?),
            "fault.node" => fill(&mut a.fault_node, parse_value(k, v)?),
            "fault.step" => fill(&mut a.fault_step, parse_value(k, v)?),
            "faulty" => fill(
                &mut a.faulty,
                Party::from_str(v, true).map_err(|e| CliError::usage(format!("{k}: {e}")))?,
            ),
            "submitter" => fill(&mut a.submitter, parse_value(k, v)?),
            "challenger" => fill(&mut a.challenger, parse_value(k, v)?),
            "seed" => fill(&mut a.seed, parse_value(k, v)?),
            "challenge_period" => fill(&mut a.challenge_period, parse_value(k, v)?),
            "deadline" => fill(&mut a.deadline, parse_value(k, v)?),
            "stake" => fill(&mut a.stake, parse_value(k, v)?),
            "n_from_model" => a.n_from_model |= parse_bool(k, v)?,
            "preimage_check" => a.no_preimage_check |= !parse_bool(k, v)?,
            _ => {
                return Err(CliError::usage(format!(
                    "{}: line {line}: unknown key `{k}`",
                    path.display()
                )))
            }
        }
    }
    Ok(())
}

/// How one party's trace departs from the honest execution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PartyFault {
    None,
    Step(u64),
    Node(NodeFault),
}

struct Scenario {
    protocol: Protocol,
    params: GameParams,
    seed: u64,
    stake: Amount,
    challenge_period: Option<u64>,
    strategies: [Strategy; 2],
    faults: [PartyFault; 2],
}

fn role_index(r: Role) -> usize {
    match r {
        Role::Submitter => 0,
        Role::Challenger => 1,
    }
}

fn opt<T: Display>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

fn cmd_dispute(mut a: DisputeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if let Some(path) = a.config.clone() {
        apply_config(&mut a, &path)?;
    }
    let protocol = a.protocol.unwrap_or(Protocol::Single);
    let params = GameParams {
        k: a.k.unwrap_or(1),
        m: a.m.unwrap_or(1),
        deadline: a.deadline.unwrap_or(GameParams::default().deadline),
        check_preimage: !a.no_preimage_check,
    };
    if params.k == 0 || params.m == 0 {
        return Err(CliError::usage("k and m must be at least 1"));
    }
    if a.fault_step == Some(0) {
        return Err(CliError::usage("fault.step is 1-based"));
    }
    let faulty = match a.faulty.unwrap_or(Party::Submitter) {
        Party::Submitter => Role::Submitter,
        Party::Challenger => Role::Challenger,
    };
    let strategies = [
        a.submitter.unwrap_or(Strategy::Honest),
        a.challenger.unwrap_or(Strategy::Honest),
    ];
    let two_phase = protocol == Protocol::TwoPhase;
    let mut faults = [PartyFault::None; 2];
    faults[role_index(faulty)] = match (a.fault_node, a.fault_step) {
        (Some(node), vm_step) => PartyFault::Node(NodeFault { node, vm_step }),
        (None, Some(_)) if two_phase => return Err(CliError::usage("two-phase faults need --fault-node")),
        (None, Some(s)) => PartyFault::Step(s),
        (None, None) => PartyFault::None,
    };
    // A `fault:S` strategy without explicit fault flags carries its own fault.
    for (f, s) in faults.iter_mut().zip(strategies) {
        if let (PartyFault::None, Strategy::FaultAtStep(step)) = (*f, s) {
            *f = if two_phase {
                PartyFault::Node(NodeFault {
                    node: step as usize,
                    vm_step: None,
                })
            } else {
                PartyFault::Step(step)
            };
        }
    }
    let sc = Scenario {
        protocol,
        params,
        seed: a.seed.unwrap_or(0),
        stake: a.stake.unwrap_or(100),
        challenge_period: a.challenge_period,
        strategies,
        faults,
    };
    let mut chain = ChainSim::new();
    if let Some(cp) = sc.challenge_period {
        chain.challenge_period = cp;
    }
    let funds = sc
        .stake
        .checked_mul(4)
        .ok_or_else(|| CliError::usage("stake too large"))?;
    chain.fund(SUBMITTER, funds);
    chain.fund(CHALLENGER, funds);
    let mut log = Transcript::new();

    let summary = match (a.synthetic, &a.model, &a.input) {
        (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
            return Err(CliError::usage(
                "--synthetic cannot be combined with --model or --input",
            ))
        }
        (Some(n), None, None) => dispute_synthetic(n, &sc, &mut chain, &mut log)?,
        (None, Some(model), Some(input)) => {
            let graph = load_model(model)?;
            let input = load_input(input, &graph)?;
            for f in sc.faults {
                if let PartyFault::Node(nf) = f {
                    if nf.node >= graph.len() {
                        return Err(CliError::usage(format!(
                            "fault node {} is out of range for a graph of {} nodes",
                            nf.node,
                            graph.len()
                        )));
                    }
                }
            }
            match sc.protocol {
                Protocol::Single => dispute_single(&graph, &input, &sc, &mut chain, &mut log)?,
                Protocol::TwoPhase => dispute_two_phase(&graph, &input, &sc, &mut chain, &mut log)?,
            }
        }
        _ => return Err(CliError::usage("dispute needs --model and --input, or --synthetic N")),
    };
    if let Some(path) = &a.transcript {
        write_file(path, log.to_jsonl().as_bytes())?;
    }
    writeln!(out, "{summary}")?;
    Ok(())
}

fn party_seeds(seed: u64) -> [u64; 2] {
    [
        rng::derive(seed, "party/submitter"),
        rng::derive(seed, "party/challenger"),
    ]
}

fn summary_line(
    winner: Role,
    rounds: u32,
    pinned_node: Option<usize>,
    pinned_step: Option<u64>,
    reason: &EndReason,
) -> String {
    format!(
        "winner={winner} rounds={rounds} pinned_node={} pinned_step={} reason={}",
        opt(pinned_node),
        opt(pinned_step),
        reason.code()
    )
}

fn dispute_synthetic(n: u64, sc: &Scenario, chain: &mut ChainSim, log: &mut Transcript) -> Result<String, CliError> {
    if n == 0 {
        return Err(CliError::usage("--synthetic needs at least one step"));
    }
    if sc.protocol == Protocol::TwoPhase {
        return Err(CliError::usage("synthetic traces only support the single protocol"));
    }
    let vm = synthetic_vm(n, sc.seed);
    let mut traces = Vec::with_capacity(2);
    for f in sc.faults {
        let step = match f {
            PartyFault::None => None,
            PartyFault::Step(s) => Some(s),
            PartyFault::Node(_) => return Err(CliError::usage("synthetic traces have no graph nodes")),
        };
        traces.push(VmTrace::new(vm.clone(), PreimageOracle::new(), step, VM_STEP_BUDGET).map_err(internal)?);
    }
    let seeds = party_seeds(sc.seed);
    let mut sub = Actor::new(SUBMITTER, sc.strategies[0], &traces[0], rng::stream(seeds[0], "single"));
    let mut chal = Actor::new(
        CHALLENGER,
        sc.strategies[1],
        &traces[1],
        rng::stream(seeds[1], "single"),
    );
    let d = run_dispute(&mut sub, &mut chal, &sc.params, sc.stake, chain, log).map_err(internal)?;
    Ok(summary_line(d.winner, d.rounds, None, d.pinned_step, &d.reason))
}

fn model_trace(graph: &Graph, input: &Tensor, f: PartyFault) -> Result<(VmTrace, GraphProgram), CliError> {
    Ok(match f {
        PartyFault::None => single_phase_trace(graph, input, None)?,
        PartyFault::Node(nf) => single_phase_trace(graph, input, Some(nf))?,
        PartyFault::Step(s) => {
            let (vm, gp) = graph_vm(graph, input)?;
            (
                VmTrace::new(vm, PreimageOracle::new(), Some(s), VM_STEP_BUDGET).map_err(internal)?,
                gp,
            )
        }
    })
}

fn dispute_single(
    graph: &Graph,
    input: &Tensor,
    sc: &Scenario,
    chain: &mut ChainSim,
    log: &mut Transcript,
) -> Result<String, CliError> {
    let (sub_trace, gp) = model_trace(graph, input, sc.faults[0])?;
    let (chal_trace, _) = model_trace(graph, input, sc.faults[1])?;
    let starts = node_start_steps(sub_trace.initial(), &gp, sub_trace.oracle())?;
    let seeds = party_seeds(sc.seed);
    let mut sub = Actor::new(SUBMITTER, sc.strategies[0], &sub_trace, rng::stream(seeds[0], "single"));
    let mut chal = Actor::new(
        CHALLENGER,
        sc.strategies[1],
        &chal_trace,
        rng::stream(seeds[1], "single"),
    );
    let d = run_dispute(&mut sub, &mut chal, &sc.params, sc.stake, chain, log).map_err(internal)?;
    let pinned_node = d.pinned_step.and_then(|s| node_at_step(&starts, s));
    Ok(summary_line(d.winner, d.rounds, pinned_node, d.pinned_step, &d.reason))
}

fn dispute_two_phase(
    graph: &Graph,
    input: &Tensor,
    sc: &Scenario,
    chain: &mut ChainSim,
    log: &mut Transcript,
) -> Result<String, CliError> {
    let seeds = party_seeds(sc.seed);
    let cfg = |i: usize, party| PartyConfig {
        party,
        strategy: sc.strategies[i],
        fault: match sc.faults[i] {
            PartyFault::Node(nf) => Some(nf),
            _ => None,
        },
        seed: seeds[i],
    };
    let o = run_two_phase_dispute(
        graph,
        input,
        &cfg(0, SUBMITTER),
        &cfg(1, CHALLENGER),
        &sc.params,
        sc.stake,
        chain,
        log,
    )?;
    Ok(format!(
        "{} phase1_rounds={} phase2_rounds={}",
        summary_line(o.winner, o.rounds(), o.pinned_node, o.pinned_step, &o.reason),
        o.phase1_rounds,
        opt(o.phase2_rounds)
    ))
}

/// `10`, `1,5,10` or `1..20` (inclusive).
fn parse_list<T: FromStr + Copy + PartialOrd + Display>(key: &str, s: &str) -> Result<Vec<T>, CliError>
where
    T::Err: Display,
{
    s.split(',').map(|v| parse_value(key, v.trim())).collect()
}

fn parse_m_list(s: &str) -> Result<Vec<u32>, CliError> {
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: u32 = parse_value("m", lo.trim())?;
        let hi: u32 = parse_value("m", hi.trim().trim_start_matches('='))?;
        if lo > hi {
            return Err(CliError::usage(format!("m: empty range {s}")));
        }
        return Ok((lo..=hi).collect());
    }
    parse_list("m", s)
}

fn cmd_security(a: &SecurityArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ps: Vec<f64> = parse_list("p", &a.p)?;
    let ms = parse_m_list(&a.m)?;
    let mut rows = Vec::with_capacity(ps.len() * ms.len());
    for &p in &ps {
        for &m in &ms {
            let params = SecurityParams::new(p, m, a.f).map_err(|e| CliError::usage(e.to_string()))?;
            rows.push(security_row(&params));
        }
    }
    writeln!(out, "p,m,f,p_any,p_majority")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.p, r.m, r.f, r.p_any, r.p_majority)?;
    }
    Ok(())
}

/// Rounds to 12 significant digits so that `2·sqrt(1e-6)` prints as 0.002.
fn num(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let r: f64 = format!("{v:.11e}").parse().expect("float round trip");
    format!("{}", r + 0.0)
}

fn cmd_economics(c: &EconomicsCmd, out: &mut dyn Write) -> Result<(), CliError> {
    let usage = |e: &dyn Display| CliError::usage(e.to_string());
    match *c {
        EconomicsCmd::Equilibrium { c, r, l, b, s } => {
            let g = GamePayoffs::new(c, r, l, b, s).map_err(|e| usage(&e))?;
            let e = verifier_equilibrium(&g).map_err(|e| usage(&e))?;
            let cell = |label: &str, v: ValidatorAction, s: SubmitterAction| {
                let (pv, ps) = payoff(&g, v, s);
                format!("{label} = ({}, {})", num(pv), num(ps))
            };
            use SubmitterAction::*;
            use ValidatorAction::*;
            writeln!(out, "| validator \\ submitter | cheat | honest |")?;
            writeln!(out, "|---|---|---|")?;
            writeln!(
                out,
                "| validate | {} | {} |",
                cell("(R-C, -S)", Validate, Cheat),
                cell("(-C, -C)", Validate, Honest)
            )?;
            writeln!(
                out,
                "| skip | {} | {} |",
                cell("(-L, B)", Skip, Cheat),
                cell("(0, -C)", Skip, Honest)
            )?;
            writeln!(out)?;
            writeln!(out, "| quantity | value |")?;
            writeln!(out, "|---|---|")?;
            for (k, v) in [("C", c), ("R", r), ("L", l), ("B", b), ("S", s)] {
                writeln!(out, "| {k} | {} |", num(v))?;
            }
            writeln!(out, "| p_c = C/(R+L) | {} |", num(e.p_c))?;
            writeln!(out, "| p_v = (B+C)/(B+S) | {} |", num(e.p_v))?;
            writeln!(out, "| interior equilibrium | {} |", e.p_c_valid && e.p_v_valid)?;
        }
        EconomicsCmd::Attention { ref r, ref t, ref c } => {
            let (rs, ts, cs): (Vec<f64>, Vec<f64>, Vec<f64>) =
                (parse_list("r", r)?, parse_list("t", t)?, parse_list("c", c)?);
            writeln!(out, "| r | t | C | G | p_t | cost |")?;
            writeln!(out, "|---|---|---|---|---|---|")?;
            for &r in &rs {
                for &t in &ts {
                    for &c in &cs {
                        let o = optimal_attention(r, t, c).map_err(|e| usage(&e))?;
                        writeln!(
                            out,
                            "| {} | {} | {} | {} | {} | {} |",
                            num(r),
                            num(t),
                            num(c),
                            num(o.g),
                            num(o.p_t),
                            num(o.cost)
                        )?;
                    }
                }
            }
        }
        EconomicsCmd::Simulate {
            rounds,
            p_t,
            validators,
            diligent,
            penalty,
            seed,
        } => simulate_attention(rounds, p_t, validators, diligent, penalty, seed, out)?,
    }
    Ok(())
}

fn simulate_attention(
    rounds: u32,
    p_t: f64,
    validators: u32,
    diligent: bool,
    penalty: Amount,
    seed: u64,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    threshold(p_t).map_err(|e| CliError::usage(e.to_string()))?;
    if rounds == 0 || validators == 0 {
        return Err(CliError::usage("rounds and validators must be positive"));
    }
    let mut rng = rng::stream(seed, "attention");
    let stake = 10;
    let mut chain = ChainSim::new();
    chain.fund(SUBMITTER, stake);
    let vs: Vec<Validator> = (0..validators)
        .map(|i| Validator {
            party: 100 + i,
            address: rng.gen(),
            diligent,
        })
        .collect();
    let deposit = penalty
        .checked_mul(rounds as Amount)
        .ok_or_else(|| CliError::usage("penalty too large"))?;
    for v in &vs {
        chain.fund(v.party, deposit);
    }
    let minted = chain.total();
    let (mut selected, mut penalized, mut reward) = (0u64, 0u64, 0 as Amount);
    for _ in 0..rounds {
        let result = Digest(rng.gen());
        let r =
            attention_round(&mut chain, SUBMITTER, &[0x5a; 20], &vs, result, p_t, penalty, stake).map_err(internal)?;
        selected += r.selected.iter().filter(|&&s| s).count() as u64;
        penalized += r.penalized.len() as u64;
        reward += r.submitter_reward;
    }
    let trials = rounds as f64 * validators as f64;
    let sigma = (trials * p_t * (1.0 - p_t)).sqrt();
    let expected = trials * p_t;
    let conserved = chain.total() == minted && chain.circulating() + chain.burned() == minted;
    writeln!(out, "trials={trials}")?;
    writeln!(out, "selected={selected}")?;
    writeln!(out, "rate={}", num(selected as f64 / trials))?;
    writeln!(out, "expected={} sigma={}", num(expected), num(sigma))?;
    writeln!(
        out,
        "within_3sigma={}",
        (selected as f64 - expected).abs() <= 3.0 * sigma
    )?;
    writeln!(
        out,
        "penalized={penalized} submitter_reward={reward} burned={}",
        chain.burned()
    )?;
    writeln!(out, "conserved={conserved}")?;
    if !conserved {
        return Err(CliError::internal("chain balances are not conserved"));
    }
    Ok(())
}

fn cmd_verify_witness(a: &VerifyArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let bytes = read_file(&a.transcript)?;
    let log =
        Transcript::parse(bytes.as_slice()).map_err(|e| CliError::usage(format!("{}: {e}", a.transcript.display())))?;
    let bad_hex = |what: &str| CliError::usage(format!("{}: bad {what} digest", a.transcript.display()));
    let mut checked = 0usize;
    let mut mismatches = 0usize;
    for rec in log.records() {
        match rec {
            Record::Header { hash: h, .. } => {
                hash::set_active(
                    h.parse()
                        .map_err(|e: hash::UnknownHash| CliError::usage(e.to_string()))?,
                );
            }
            Record::Arbitration {
                phase,
                pre_index,
                steps,
                pre_root,
                submitter_post,
                challenger_post,
                author,
                witnesses,
                computed,
                result,
            } => {
                if witnesses.is_empty() {
                    writeln!(
                        out,
                        "phase={phase} pre_index={pre_index} witnesses=0 recorded={result} skipped"
                    )?;
                    continue;
                }
                let pinned = Pinned {
                    i: *pre_index,
                    j: *steps,
                    pre_root: Digest::from_hex(pre_root).map_err(|_| bad_hex("pre_root"))?,
                    submitter_post: Digest::from_hex(submitter_post).map_err(|_| bad_hex("submitter_post"))?,
                    challenger_post: Digest::from_hex(challenger_post).map_err(|_| bad_hex("challenger_post"))?,
                };
                let decoded: Result<Vec<StepWitness>, _> = witnesses
                    .iter()
                    .map(|h| {
                        hex::decode(h)
                            .map_err(|e| e.to_string())
                            .and_then(|b| StepWitness::from_bytes(&b).map_err(|e| e.to_string()))
                    })
                    .collect();
                let (winner, replayed) = match decoded {
                    Ok(ws) => {
                        let arb = arbitrate(&pinned, &ws, *author, !a.no_preimage_check);
                        (arb.winner, arb.computed.map(|d| d.to_hex()))
                    }
                    Err(_) => (author.other(), None),
                };
                let consistent = replayed == *computed && result.starts_with(&format!("{winner}:"));
                checked += 1;
                mismatches += !consistent as usize;
                writeln!(
                    out,
                    "phase={phase} pre_index={pre_index} steps={steps} computed={} winner={winner} consistent={consistent}",
                    opt(replayed)
                )?;
            }
            _ => {}
        }
    }
    writeln!(out, "arbitrations={checked} mismatches={mismatches}")?;
    if mismatches > 0 {
        return Err(CliError::usage("transcript arbitration does not replay"));
    }
    Ok(())
}

fn cmd_complexity(a: &ComplexityArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.k == 0 || a.m == 0 {
        return Err(CliError::usage("k and m must be at least 1"));
    }
    let graph = load_model(&a.model)?;
    let input = load_input(&a.input, &graph)?;
    let r = complexity_report(&graph, &input, a.k, a.m)?;
    writeln!(out, "| quantity | value |")?;
    writeln!(out, "|---|---|")?;
    let rows: [(&str, String); 10] = [
        ("k", r.k.to_string()),
        ("m", r.m.to_string()),
        ("nodes", r.nodes.to_string()),
        ("compute nodes", r.compute_nodes.to_string()),
        ("sum of node traces", r.total_node_steps.to_string()),
        ("largest node trace", r.max_node_steps.to_string()),
        ("whole-graph trace", r.graph_steps.to_string()),
        ("two-phase rounds", format!("{} + {}", r.phase1_rounds, r.phase2_rounds)),
        ("single-phase rounds", r.single_phase_rounds.to_string()),
        (
            "whole-graph / node sum",
            num(r.graph_steps as f64 / r.total_node_steps.max(1) as f64),
        ),
    ];
    for (k, v) in rows {
        writeln!(out, "| {k} | {v} |")?;
    }
    Ok(())
}

fn cmd_gen_model(a: &GenModelArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let dims: Vec<usize> = parse_list("dims", &a.dims)?;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(CliError::usage("dims needs at least two positive widths"));
    }
    let graph =
        random_mlp(&mut rng::stream(a.seed, "model"), &dims, a.argmax).map_err(|e| CliError::usage(e.to_string()))?;
    write_file(&a.out, &model_file::to_bytes(&graph))?;
    writeln!(out, "model={} nodes={}", model_digest(&graph), graph.len())?;
    Ok(())
}

fn cmd_gen_input(a: &GenInputArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let graph = load_model(&a.model)?;
    let t = random_input(&mut rng::stream(a.seed, "input"), graph.input_shape().to_vec());
    write_file(&a.out, &t.to_bytes())?;
    writeln!(out, "input={}", t.digest())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (Result<(), CliError>, String) {
        let mut out = Vec::new();
        let r = run(std::iter::once("opml").chain(args.iter().copied()), &mut out);
        (r, String::from_utf8(out).unwrap())
    }

    #[test]
    fn security_row_known_value() {
        let (r, out) = call(&["security", "--p", "0.5", "--m", "10", "--f", "0.5"]);
        r.unwrap();
        assert_eq!(out, "p,m,f,p_any,p_majority\n0.5,10,0.5,0.9990234375,0.623046875\n");
    }

    #[test]
    fn attention_row_prints_cost() {
        let (r, out) = call(&["economics", "attention", "--r", "0.001", "--t", "1", "--c", "0.001"]);
        r.unwrap();
        assert!(out.contains("| 0.001 | 1 | 0.001 | 1 | 0.001 | 0.002 |"), "{out}");
    }

    #[test]
    fn equilibrium_echoes_payoffs() {
        let (r, out) = call(&["economics", "equilibrium"]);
        r.unwrap();
        assert!(out.contains("(R-C, -S) = (2, -8)"));
        assert!(out.contains("| p_c = C/(R+L) | 0.25 |"));
        assert!(out.contains("| p_v = (B+C)/(B+S) | 0.3 |"));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(call(&["frobnicate"]).0.unwrap_err().code, EXIT_USAGE);
        assert_eq!(call(&["security", "--p", "1.5"]).0.unwrap_err().code, EXIT_USAGE);
        let e = call(&["run", "--model", "/nonexistent/m.opml", "--input", "x"])
            .0
            .unwrap_err();
        assert_eq!(e.code, EXIT_USAGE);
        assert!(e.msg.contains("/nonexistent/m.opml"));
        assert_eq!(call(&["dispute"]).0.unwrap_err().code, EXIT_USAGE);
        assert_eq!(
            call(&["dispute", "--synthetic", "8", "--protocol", "two-phase"])
                .0
                .unwrap_err()
                .code,
            EXIT_USAGE
        );
    }

    #[test]
    fn synthetic_dispute_pins_fault() {
        let (r, out) = call(&["dispute", "--synthetic", "16", "--fault-step", "5", "--seed", "7"]);
        r.unwrap();
        assert_eq!(
            out,
            "winner=challenger rounds=4 pinned_node=none pinned_step=5 reason=arbitration\n"
        );
        let (r, out) = call(&["dispute", "--synthetic", "16"]);
        r.unwrap();
        assert!(out.starts_with("winner=submitter rounds=0 "), "{out}");
    }

    #[test]
    fn help_is_not_an_error() {
        let (r, out) = call(&["--help"]);
        r.unwrap();
        assert!(out.contains("dispute"));
    }

    #[test]
    fn number_formatting() {
        assert_eq!(num(2.0 * (1e-6f64).sqrt()), "0.002");
        assert_eq!(num(0.25), "0.25");
        assert_eq!(num(-0.0), "0");
    }
}
