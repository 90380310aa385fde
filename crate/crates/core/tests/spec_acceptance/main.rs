//! Acceptance suite: one line per criterion, nonzero exit if any fails.

#[path = "../common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use normlab::actor::{Actor, Memory};
use normlab::backend::stub::{StubOptions, StubServer};
use normlab::backend::{share, BackendConfig, BackendError, BackendKind, Corpus, RemoteConfig};
use normlab::certify::{
    action_class_prob, certify_convention_sensitivity, certify_sanction_sensitivity, classify_normative,
    collective_policy_prob, epsilon_similar, ActionFrame, ConventionOptions, NormOptions, SanctionOptions, Verdict,
};
use normlab::experiments::{lesion_cells, run_experiment, ExperimentConfig, ExperimentKind, LesionSetting, MetricsTable};
use normlab::lmae::{Scenario, GREETING_SCENARIO};
use normlab::prefs::{polarization_experiment, PolarizationConfig};
use normlab::seq::{ActorId, Sequence, Valence};

use common::{argmax, kl, random_corpus, slot_mass, total_variation, BigramOracle};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn read(rel: &str) -> String {
    std::fs::read_to_string(root().join(rel)).unwrap()
}

fn frame(rel: &str) -> ActionFrame {
    serde_json::from_str(&read(rel)).unwrap()
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure!(elapsed.as_secs_f64() < limit_s, "took {:.2}s, limit {limit_s}s", elapsed.as_secs_f64());
    Ok(())
}

fn table(lambda: f64) -> BackendConfig {
    BackendConfig { smoothing_lambda: lambda, ..BackendConfig::table() }
}

fn actor(config: &BackendConfig, id: &str, memory: &[String]) -> Actor {
    let mut a = Actor::new(ActorId::new(id).unwrap(), share(config.build().unwrap()));
    a.memory = Memory::from_entries(memory.iter().cloned());
    a
}

fn kl_oracle() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let vocab = 2 + (i as usize * 7919) % 49;
        let corpus = random_corpus(i, vocab);
        let lambda = [0.1, 0.5, 1.0][i as usize % 3];
        let mut b = table(lambda).build().unwrap();
        b.consolidate(&Corpus::from_texts(&corpus)).unwrap();
        let oracle = BigramOracle::new(&corpus, lambda);
        let c1 = format!("w{}", i as usize % vocab);
        let c2 = format!("w{}", (i as usize * 3 + 1) % vocab);
        for (a, z) in [(&c1, &c2), (&c2, &c1), (&c1, &c1)] {
            let got = b.kl_divergence(&Sequence::new(a), &Sequence::new(z), 1).unwrap();
            ensure!(got.is_exact(), "table KL should be exact");
            let want = kl(&oracle.next(a), &oracle.next(z));
            worst = worst.max((got.value - want).abs());
        }
    }
    ensure!(worst < 1e-9, "max |KL - oracle| = {worst:e}");
    within(start.elapsed(), 5.0)?;
    Ok(format!("100 corpora, max error {worst:.1e}"))
}

fn epsilon_similarity() -> Check {
    let mut b = table(0.5).build().unwrap();
    let corpus = [
        "say hello there",
        "say hi there",
        "hello friend",
        "hi friend",
        "goodbye forever",
        "goodbye forever",
        "goodbye forever",
        "hello there",
        "hi there",
    ];
    b.consolidate(&Corpus::from_texts(corpus)).unwrap();
    let c = Sequence::new("they say hello");
    for eps in [1e-12, 1e-6, 0.1, 1.0] {
        for u in ["hello", "goodbye", "say"] {
            let s = epsilon_similar(b.as_ref(), &u.into(), &u.into(), &c, eps, 1).unwrap();
            ensure!(s.similar == Some(true) && s.kl.value == 0.0, "reflexivity failed for {u} at {eps}");
        }
    }
    let sym = epsilon_similar(b.as_ref(), &"hello".into(), &"hi".into(), &c, 1e-6, 1).unwrap();
    ensure!(sym.kl.value == 0.0 && sym.similar == Some(true), "symmetric KL {}", sym.kl.value);
    let div = epsilon_similar(b.as_ref(), &"hello".into(), &"goodbye".into(), &c, 0.1, 1).unwrap();
    let oracle = BigramOracle::new(&corpus.map(String::from), 0.5);
    let want = kl(&oracle.next("hello"), &oracle.next("goodbye"));
    ensure!((div.kl.value - want).abs() < 1e-12, "divergent KL {} vs oracle {want}", div.kl.value);
    ensure!(div.similar == Some(false) && div.kl.value > 0.1, "divergent KL {} not above 0.1", div.kl.value);
    Ok(format!("symmetric KL 0, divergent KL {:.4}", div.kl.value))
}

fn greeting_with(kind: BackendKind) -> (Actor, f64) {
    let mut s = Scenario::from_json(GREETING_SCENARIO).unwrap();
    let spec = s.backends.get_mut("precedent").unwrap();
    spec.config.kind = kind;
    let lambda = spec.config.smoothing_lambda;
    let actors = s.build_actors(&s.build_backends().unwrap()).unwrap();
    (actors.into_iter().find(|a| a.id.as_str() == "Alice").unwrap(), lambda)
}

fn convention_certification() -> Check {
    let start = Instant::now();
    let grid = [0.25, 0.5, 0.75, 1.0];
    let f = frame("scenarios/greeting_frame.json");
    let mut worst: f64 = 0.0;
    for kind in [BackendKind::Table, BackendKind::Weighted] {
        let (alice, lambda) = greeting_with(kind);
        let n = alice.memory.texts().filter(|t| t.as_str().starts_with("[the phone is ringing,")).count();
        ensure!(n == 20, "expected 20 precedents, found {n}");
        let r = certify_convention_sensitivity(&alice, &f, &ConventionOptions::new(&grid, 0)).unwrap();
        ensure!(r.verdict == Verdict::Certified, "{kind:?}: verdict {:?}", r.verdict);
        let mut last = -1.0;
        for g in &r.grid {
            let edits = (g.f * n as f64).ceil();
            // support of the untrained model: hello, duck and the end marker
            let hello = slot_mass(n as f64 - edits, 1, lambda, 3);
            let duck = slot_mass(edits, 3, lambda, 3);
            worst = worst.max((g.p_action.value - hello / (hello + duck)).abs());
            worst = worst.max((g.p_alternative.value - duck / (hello + duck)).abs());
            ensure!(g.p_alternative.value > last, "{kind:?}: p(a') not increasing at f={}", g.f);
            last = g.p_alternative.value;
        }
    }
    ensure!(worst < 1e-9, "closed-form mismatch {worst:e}");
    within(start.elapsed(), 10.0)?;
    Ok(format!("certified under both backends, max error {worst:.1e}"))
}

#[derive(serde::Deserialize)]
struct ControlCase {
    name: String,
    memory: Vec<String>,
    frame: ActionFrame,
    sanction: SanctionOptions,
}

#[derive(serde::Deserialize)]
struct Controls {
    cases: Vec<ControlCase>,
}

fn sanction_controls() -> Check {
    let controls: Controls = serde_json::from_str(&read("assets/sanction_controls.json")).unwrap();
    ensure!(!controls.cases.is_empty(), "empty control corpus");
    for case in &controls.cases {
        for (config, want) in [(BackendConfig::weighted(), Verdict::Certified), (BackendConfig::table(), Verdict::Refuted)] {
            let a = actor(&config, "me", &case.memory);
            let got = certify_sanction_sensitivity(&a, &case.frame, &case.sanction, 0).unwrap().verdict;
            ensure!(got == want, "{}: {:?} backend gave {got:?}, expected {want:?}", case.name, config.kind);
        }
    }
    Ok(format!("{} cases: weighted certified, table refuted", controls.cases.len()))
}

fn greeter_memory(hello: usize, duck: usize) -> Vec<String> {
    (0..hello)
        .map(|i| format!("[phone rings, k{i}:hello]"))
        .chain((0..duck).map(|i| format!("[phone rings, d{i}:duck duck duck]")))
        .collect()
}

fn collective_policy() -> Check {
    let f = ActionFrame::new("phone rings", &["hello", "duck duck duck"], "hello", "duck duck duck").with_singleton_classes();
    let config = table(0.5);
    let pop: Vec<Actor> = (0..8).map(|k| actor(&config, &format!("a{k}"), &greeter_memory(k + 1, 8 - k))).collect();
    let joint: Vec<(ActorId, Sequence)> = pop.iter().map(|a| (a.id.clone(), "hello".into())).collect();
    let frames = vec![f.clone(); 8];

    let single = collective_policy_prob(&pop[..1], &joint[..1], &frames[..1], 0).unwrap();
    let classes = f.resolve(None).unwrap();
    let individual = action_class_prob(&pop[0], &f, &classes, None, 0).unwrap()[classes.action_class];
    ensure!(single.value == individual.value, "single {} vs individual {}", single.value, individual.value);

    let product = collective_policy_prob(&pop, &joint, &frames, 0).unwrap();
    let want: f64 = (0..8)
        .map(|k| {
            let h = slot_mass((k + 1) as f64, 1, 0.5, 3);
            let d = slot_mass((8 - k) as f64, 3, 0.5, 3);
            h / (h + d)
        })
        .product();
    ensure!((product.value - want).abs() < 1e-12, "product {} vs {want}", product.value);

    let nines: Vec<Actor> = (0..8).map(|k| actor(&table(0.0), &format!("a{k}"), &greeter_memory(9, 1))).collect();
    let p = collective_policy_prob(&nines, &joint, &frames, 0).unwrap().value;
    ensure!((p - 0.43046721).abs() < 1e-12, "0.9^8 case gave {p}");
    Ok(format!("8-actor product {:.6}, 0.9^8 = {p:.8}", product.value))
}

fn norm_classification() -> Check {
    let f = frame("scenarios/litter_frame.json");
    let grid: Vec<f64> = (1..=20).map(|k| k as f64 / 20.0).collect();
    let opts = NormOptions { generic_threshold: 0.9, ..NormOptions::new(grid) };
    let classify = |rel: &str| {
        let s = Scenario::load(&root().join(rel)).unwrap();
        let pop = s.build_actors(&s.build_backends().unwrap()).unwrap();
        classify_normative(&pop, std::slice::from_ref(&f), &opts).unwrap()
    };
    let all = classify("scenarios/park.json");
    ensure!(all.normative && all.scope.len() == 8, "8/8 population: normative={} scope={}", all.normative, all.scope.len());
    let family = classify("scenarios/park_family.json");
    ensure!(!family.normative, "2/8 population classified normative");
    ensure!(family.narrow_scope && family.scope.len() == 2, "2/8 population not reported as narrow scope");
    Ok("8/8 normative, 2/8 narrow-scope convention".into())
}

fn lesion() -> Check {
    let start = Instant::now();
    let c = lesion_cells(&BackendConfig::weighted(), &LesionSetting::default(), 50, 0).unwrap();
    let (pre, post) = (total_variation(&c.pre_intact, &c.pre_lesioned), total_variation(&c.post_intact, &c.post_lesioned));
    ensure!(pre > 0.1, "pre-consolidation TV {pre}");
    ensure!(post < 0.01, "post-consolidation TV {post}");
    within(start.elapsed(), 5.0)?;
    Ok(format!("TV pre {pre:.4}, post {post:.5}"))
}

fn explicit_vs_implicit() -> Check {
    let s = LesionSetting::default();
    let w = lesion_cells(&BackendConfig::weighted(), &s, 50, 0).unwrap();
    let t = lesion_cells(&BackendConfig::table(), &s, 50, 0).unwrap();
    // weighted: the rule flips the choice, removal restores the naive
    // distribution, and after consolidation removal no longer matters
    ensure!(argmax(&w.ruled) != argmax(&w.naive), "rule did not flip the weighted choice: {:?} -> {:?}", w.naive, w.ruled);
    ensure!(w.pre_lesioned == w.naive, "removing the rule before consolidation left {:?}", w.pre_lesioned);
    ensure!(argmax(&w.post_lesioned) == argmax(&w.ruled), "effect lost after consolidation: {:?}", w.post_lesioned);
    // table: the rule is inert in every cell
    ensure!(t.ruled == t.naive, "rule changed the table distribution");
    ensure!(t.pre_lesioned == t.naive, "table lesion before consolidation changed the distribution");
    ensure!(argmax(&t.post_lesioned) == argmax(&t.naive), "table choice moved after consolidation");
    ensure!(argmax(&t.pre_intact) == argmax(&t.naive), "table practice changed the choice");
    Ok(format!(
        "weighted p(apple) {:.3} -> {:.3} -> removed {:.3} -> consolidated {:.3}; table unchanged",
        w.naive[0], w.ruled[0], w.pre_lesioned[0], w.post_lesioned[0]
    ))
}

fn polarization() -> Check {
    let start = Instant::now();
    let rows = polarization_experiment(&PolarizationConfig::four_identities()).unwrap();
    let p = |mode: &str| -> BTreeMap<String, f64> {
        rows.iter().filter(|r| r.mode == mode && r.trial == 0).map(|r| (r.item.clone(), r.probability)).collect()
    };
    let (top, full) = (p("top-only"), p("full-relation"));
    ensure!(top["a2"] < top["a1"] && top["a2"] < top["a3"], "top-only: a2 not minimal {top:?}");
    ensure!(full["a2"] > top["a2"], "full-relation P(a2) {} not above top-only {}", full["a2"], top["a2"]);
    within(start.elapsed(), 10.0)?;
    Ok(format!("top-only P(a2) {:.3}, full-relation P(a2) {:.3}", top["a2"], full["a2"]))
}

fn series(t: &MetricsTable, arm: &str, metric: &str) -> Vec<f64> {
    t.series(arm, 0, metric).into_iter().map(|(_, v)| v).collect()
}

fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    xs.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
}

fn conjectures() -> Check {
    let start = Instant::now();
    let stability = run_experiment(&ExperimentConfig::new(ExperimentKind::NormStability), None).unwrap();
    let drift = |arm: &str| {
        let s = series(&stability, arm, "compliance_prob");
        s.iter().map(|x| (x - s[0]).abs()).fold(0.0, f64::max)
    };
    let (treated, ablated) = (drift("treatment"), drift("ablation"));
    ensure!(series(&stability, "treatment", "compliance_prob").len() == 51, "expected ticks 0..=50");
    ensure!(treated <= 0.05, "stability drift {treated}");
    ensure!(ablated > 0.05, "ablation drift only {ablated}");

    let adoption = run_experiment(&ExperimentConfig::new(ExperimentKind::NormAdoption), None).unwrap();
    let newcomer = series(&adoption, "treatment", "newcomer_compliance_prob");
    let control = series(&adoption, "ablation", "newcomer_compliance_prob");
    ensure!(newcomer[30] > 0.8, "newcomer at tick 30: {}", newcomer[30]);
    // dips of the 5-tick average stay below 1e-3 (worst over seeds 0-4 in development: 3.2e-4)
    let smooth = moving_average(&newcomer, 5);
    let dip = smooth.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
    ensure!(dip < 1e-3, "smoothed newcomer series drops by {dip}");
    ensure!(control[30] <= 0.8, "ablation newcomer at tick 30: {}", control[30]);
    within(start.elapsed(), 60.0)?;
    Ok(format!(
        "stability drift {treated:.3} (ablation {ablated:.3}); newcomer@30 {:.3} (ablation {:.3})",
        newcomer[30], control[30]
    ))
}

struct Cli {
    dir: tempfile::TempDir,
}

impl Cli {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str], out: &str) -> Result<Vec<u8>, String> {
        let o = Command::new(env!("CARGO_BIN_EXE_normlab"))
            .current_dir(root())
            .args(args)
            .arg("--out")
            .arg(self.path(out))
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(o.status.success(), "normlab {}: {}", args.join(" "), String::from_utf8_lossy(&o.stderr));
        std::fs::read(self.path(out)).map_err(|e| e.to_string())
    }

    fn twice(&self, args: &[&str]) -> Result<Vec<u8>, String> {
        let a = self.run(args, "first")?;
        let b = self.run(args, "second")?;
        ensure!(a == b, "normlab {} is not byte-identical across runs", args.join(" "));
        ensure!(!a.is_empty(), "normlab {} wrote nothing", args.join(" "));
        Ok(a)
    }

    fn config(&self, name: &str, json: &str) -> String {
        let p = self.path(name);
        std::fs::write(&p, json).unwrap();
        p.to_string_lossy().into_owned()
    }
}

fn determinism() -> Check {
    let cli = Cli::new();
    let greet = ["--scenario", "scenarios/greeting.json"];
    let run = |extra: &[&'static str]| -> Vec<&'static str> { [&["run", "--seed", "7"][..], &greet, extra].concat() };
    let base = cli.twice(&run(&[]))?;
    let reversed = cli.run(&run(&["--order", "7,6,5,4,3,2,1,0"]), "reversed")?;
    ensure!(reversed == base, "reversed evaluation order changed the trace");
    let shuffled = cli.run(&run(&["--order", "3,0,6,1,7,2,5,4"]), "shuffled")?;
    ensure!(shuffled == base, "shuffled evaluation order changed the trace");
    let parallel = cli.run(&run(&["--parallel"]), "parallel")?;
    ensure!(parallel == base, "parallel stepping changed the trace");
    cli.twice(&[&["run", "--seed", "3", "--scenario", "scenarios/park.json", "--verbosity", "full"][..]].concat())?;

    let certify = |kind: &str, extra: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = ["certify", kind, "--scenario", "scenarios/greeting.json", "--actor", "Carol"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        v.extend(["--frame", "scenarios/greeting_frame.json", "--seed", "5"].iter().map(|s| s.to_string()));
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    for args in [
        certify("convention", &[]),
        certify("reproduction", &["--r", "0.5"]),
        certify("sanction", &["--sanctioner", "Dave", "--signal", "frowns"]),
    ] {
        cli.twice(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
    }
    cli.twice(&["certify", "norm", "--scenario", "scenarios/park.json", "--frame", "scenarios/litter_frame.json"])?;

    let ctx = cli.config("context.txt", "[pasta or soup?, Ann:pasta]\n[pasta or soup?, Bo:soup]\n[pasta or soup?, Cy:pasta]");
    cli.twice(&["elicit", "--context-file", &ctx, "--items", "pasta,soup,salad", "--symmetrize"])?;

    let configs = [
        ("norm-stability", r#"{"horizon": 8, "seeds": [0, 1]}"#),
        ("norm-adoption", r#"{"horizon": 8, "seeds": [2]}"#),
        ("tipping-point", r#"{"horizon": 6, "tipping": {"fractions": [0.0, 0.25, 0.5]}}"#),
        ("consolidation-lesion", r#"{"seeds": [0, 4]}"#),
        ("polarization", r#"{"seeds": [0, 1], "polarization": {"identities": [
            {"name": "i1", "ranking": ["a1", "a2", "a3"]}, {"name": "i2", "ranking": ["a3", "a2", "a1"]}], "trials": 2}}"#),
    ];
    for (kind, json) in configs {
        let cfg = cli.config(&format!("{kind}.json"), json);
        let one = cli.twice(&["experiment", kind, "--config", &cfg, "--workers", "1"])?;
        let two = cli.run(&["experiment", kind, "--config", &cfg, "--workers", "2"], "workers")?;
        ensure!(one == two, "{kind}: worker count changed the metrics");
    }
    Ok("run x4 modes, certify x4, elicit, experiment x5 byte-identical".into())
}

fn remote(url: &str, samples: usize) -> BackendConfig {
    BackendConfig {
        kind: BackendKind::Remote,
        remote: Some(RemoteConfig { endpoint: url.into(), samples, backoff_ms: 1, ..RemoteConfig::default() }),
        ..BackendConfig::default()
    }
}

fn stub(options: StubOptions) -> StubServer {
    let mut b = BackendConfig::weighted().build().unwrap();
    b.consolidate(&Corpus::from_texts(["a b", "a b", "a c", "x c", "x d"])).unwrap();
    StubServer::start(b, options).unwrap()
}

fn remote_contract() -> Check {
    let server = stub(StubOptions::serving());
    let client = remote(server.url(), 64).build().unwrap();
    let out = client.sample_completions(&"a".into(), 2, 3, 9).unwrap();
    ensure!(out.len() == 3, "asked for 3 samples, got {}", out.len());
    let req = &server.requests()[0];
    let keys: Vec<&str> = req.as_object().unwrap().keys().map(String::as_str).collect();
    for k in ["context", "max_tokens", "n", "temperature", "seed", "logprobs"] {
        ensure!(keys.contains(&k), "request lacks {k}: {req}");
    }
    ensure!(req["context"] == "a" && req["max_tokens"] == 2 && req["n"] == 3 && req["seed"] == 9, "request {req}");
    ensure!(req["logprobs"] == false && req["temperature"].is_f64(), "request {req}");
    let lp = client.log_prob(&"a".into(), &"b".into()).unwrap();
    let local = {
        let mut b = BackendConfig::weighted().build().unwrap();
        b.consolidate(&Corpus::from_texts(["a b", "a b", "a c", "x c", "x d"])).unwrap();
        b.log_prob(&"a".into(), &"b".into()).unwrap()
    };
    ensure!((lp - local).abs() < 1e-12, "scored log-prob {lp} vs {local}");

    let flaky = stub(StubOptions { fail_first: 2, fail_status: 503, ..StubOptions::serving() });
    remote(flaky.url(), 8).build().unwrap().sample_completion(&"a".into(), 2, 1).map_err(|e| e.to_string())?;
    ensure!(flaky.hits() == 3, "expected 2 retries, server saw {} requests", flaky.hits());
    let down = stub(StubOptions { fail_first: 100, fail_status: 502, ..StubOptions::serving() });
    match remote(down.url(), 8).build().unwrap().sample_completion(&"a".into(), 2, 1) {
        Err(BackendError::RemoteUnavailable { attempts: 4, last_status: Some(502), .. }) => {}
        other => return Err(format!("expected RemoteUnavailable after 4 attempts, got {other:?}")),
    }
    let refused = stub(StubOptions { fail_first: 1, fail_status: 400, ..StubOptions::serving() });
    ensure!(remote(refused.url(), 8).build().unwrap().sample_completion(&"a".into(), 2, 1).is_err(), "4xx accepted");
    ensure!(refused.hits() == 1, "4xx was retried");

    let kl = client.kl_divergence(&"a".into(), &"x".into(), 1).unwrap();
    let se = kl.std_error.ok_or("Monte-Carlo KL reported as exact")?;
    ensure!(se.is_finite() && se > 0.0 && kl.value > 0.0, "KL estimate {kl:?}");

    // a sanction that barely moves p(hello) cannot be resolved from samples
    let f = ActionFrame::new("phone rings", &["hello", "duck duck duck"], "hello", "duck duck duck").with_singleton_classes();
    let sanction =
        SanctionOptions { sanctioner: ActorId::new("i").unwrap(), signal: "frowns".into(), valence: Valence::Negative, count: 1, contextual: false };
    let weak = actor(&remote(server.url(), 64), "me", &greeter_memory(6, 0));
    let r = certify_sanction_sensitivity(&weak, &f, &sanction, 0).unwrap();
    ensure!(r.verdict == Verdict::Inconclusive, "weak effect gave {:?}", r.verdict);
    ensure!(r.estimator_error.is_some(), "Monte-Carlo report carries no estimator error");
    let strong = actor(&remote(server.url(), 2000), "me", &greeter_memory(1, 1));
    let r = certify_sanction_sensitivity(&strong, &f, &sanction, 0).unwrap();
    ensure!(r.verdict == Verdict::Certified, "strong effect gave {:?}", r.verdict);
    Ok(format!("schema, retries, KL {:.3} ± {se:.3}, inconclusive downgrade", kl.value))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 12] = [
        ("KL oracle equivalence", kl_oracle),
        ("epsilon-similarity reflexivity and construction", epsilon_similarity),
        ("convention-sensitivity certification", convention_certification),
        ("sanction-sensitivity controls", sanction_controls),
        ("collective policy", collective_policy),
        ("norm classification", norm_classification),
        ("consolidation and virtual lesion", lesion),
        ("explicit vs implicit norms", explicit_vs_implicit),
        ("polarization", polarization),
        ("stability and adoption conjectures", conjectures),
        ("determinism", determinism),
        ("remote backend contract", remote_contract),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str()) || *x == (i + 1).to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("acceptance {:>2} PASS {name}: {detail} [{secs:.2}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("acceptance {:>2} FAIL {name}: {why} [{secs:.2}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

