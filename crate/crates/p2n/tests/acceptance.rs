//! Exit-gate checks. Every test verifies one user-facing guarantee of the
//! toolkit against an independent oracle implemented here, and prints a
//! single verdict line (visible with `--nocapture` or `--show-output`).

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::BufRead;
use std::net::TcpStream;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use p2n::distnet::{write_message, FrameReader, Message, PROTOCOL_VERSION};
use p2n::facts;
use p2n::features::{extract_structural_features, standardize, RelationWeights};
use p2n::hac::{cluster, cut, CutRule, Linkage, Merge};
use p2n::metrics::{euclidean_distance, similarity, similarity_matrix, SimilarityMatrix};
use p2n::restructure::{
    agreement, classify_maintenance, declared_partition, partition_to_nodes, progress_report,
    suggest_moves, MaintenanceCategory, MAINTENANCE_TABLE,
};

fn criterion<F: FnOnce()>(number: u32, name: &str, body: F) {
    let result = catch_unwind(AssertUnwindSafe(body));
    let verdict = if result.is_ok() { "PASS" } else { "FAIL" };
    println!("criterion {number} ({name}): {verdict}");
    if let Err(cause) = result {
        std::panic::resume_unwind(cause);
    }
}

fn sample(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

/// Symmetric similarity matrix with all entries distinct, uniform in (0,1],
/// returned both as a full square (for the oracles) and in library form.
fn random_similarity(n: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, SimilarityMatrix<f64>) {
    loop {
        let mut full = vec![vec![0.0; n]; n];
        let mut bits = BTreeSet::new();
        let mut distinct = true;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 1.0 - rng.gen::<f64>();
                distinct &= bits.insert(v.to_bits());
                full[i][j] = v;
                full[j][i] = v;
            }
        }
        if !distinct {
            continue;
        }
        let rows = (0..n).map(|i| full[i][i + 1..].to_vec()).collect();
        return (full, SimilarityMatrix::from_rows(rows).unwrap());
    }
}

fn cross_pick(
    original: &[Vec<f64>],
    xs: &[usize],
    ys: &[usize],
    pick: fn(f64, f64) -> f64,
) -> f64 {
    let mut out = None;
    for &x in xs {
        for &y in ys {
            let v = original[x][y];
            out = Some(match out {
                None => v,
                Some(o) => pick(o, v),
            });
        }
    }
    out.unwrap()
}

fn cross_mean(original: &[Vec<f64>], xs: &[usize], ys: &[usize]) -> f64 {
    let mut sum = 0.0;
    for &x in xs {
        for &y in ys {
            sum += original[x][y];
        }
    }
    sum / (xs.len() * ys.len()) as f64
}

/// Reference clustering that never uses the incremental update rule. Three
/// linkages recompute their statistic from the original matrix at every
/// step; the weighted average keeps a plain map of pair values and halves
/// them on merge. Ties go to the smallest (left, right) id pair.
fn naive_cluster(original: &[Vec<f64>], linkage: Linkage) -> Vec<Merge<f64>> {
    let n = original.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let key = |a: usize, b: usize| if a < b { (a, b) } else { (b, a) };
    let mut pair: HashMap<(usize, usize), f64> = HashMap::new();
    for i in 0..n {
        for j in (i + 1)..n {
            pair.insert((i, j), original[i][j]);
        }
    }

    let mut merges = Vec::with_capacity(n - 1);
    for step in 1..n {
        // `clusters` stays sorted by id, so scanning a < b visits id pairs
        // in lexicographic order and a strict `>` keeps the smallest tie.
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let s = match linkage {
                    Linkage::Single => {
                        cross_pick(original, &clusters[a].1, &clusters[b].1, f64::max)
                    }
                    Linkage::Complete => {
                        cross_pick(original, &clusters[a].1, &clusters[b].1, f64::min)
                    }
                    Linkage::UnweightedAverage => {
                        cross_mean(original, &clusters[a].1, &clusters[b].1)
                    }
                    Linkage::WeightedAverage => pair[&key(clusters[a].0, clusters[b].0)],
                };
                if best.is_none_or(|(bs, _, _)| s > bs) {
                    best = Some((s, a, b));
                }
            }
        }
        let (similarity, a, b) = best.unwrap();
        let (left, right) = (clusters[a].0, clusters[b].0);
        let new_id = n - 1 + step;

        let (_, members_b) = clusters.remove(b);
        let (_, mut members) = clusters.remove(a);
        members.extend(members_b);
        for &(other, _) in &clusters {
            let halves = (pair[&key(left, other)] + pair[&key(right, other)]) / 2.0;
            pair.insert(key(new_id, other), halves);
        }
        let new_size = members.len();
        clusters.push((new_id, members));

        merges.push(Merge {
            step,
            left,
            right,
            similarity,
            new_size,
        });
    }
    merges
}

#[test]
fn update_rules_match_naive_per_step_recomputation() {
    criterion(1, "linkage oracles", || {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for round in 0..200 {
            let n = rng.gen_range(2..=40);
            let (full, matrix) = random_similarity(n, &mut rng);
            for linkage in Linkage::ALL {
                let lib = cluster(&matrix, linkage).unwrap();
                let oracle = naive_cluster(&full, linkage);
                assert_eq!(lib.merges().len(), oracle.len());
                for (got, want) in lib.merges().iter().zip(&oracle) {
                    assert_eq!(
                        (got.step, got.left, got.right, got.new_size),
                        (want.step, want.left, want.right, want.new_size),
                        "round {round}, {linkage}, n={n}"
                    );
                    assert!(
                        (got.similarity - want.similarity).abs() <= 1e-9,
                        "round {round}, {linkage}, step {}: {} vs {}",
                        got.step,
                        got.similarity,
                        want.similarity
                    );
                }
            }
        }
    });
}

#[test]
fn merge_similarities_never_increase() {
    criterion(2, "monotone dendrogram", || {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..200 {
            let n = rng.gen_range(2..=40);
            let (_, matrix) = random_similarity(n, &mut rng);
            for linkage in Linkage::ALL {
                let d = cluster(&matrix, linkage).unwrap();
                for w in d.merges().windows(2) {
                    assert!(
                        w[1].similarity <= w[0].similarity,
                        "{linkage}: step {} rose from {} to {}",
                        w[1].step,
                        w[0].similarity,
                        w[1].similarity
                    );
                }
            }
        }
    });
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn new(n: usize) -> Dsu {
        Dsu((0..n).collect())
    }

    fn find(&mut self, x: usize) -> usize {
        if self.0[x] != x {
            let root = self.find(self.0[x]);
            self.0[x] = root;
        }
        self.0[x]
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        self.0[ra] = rb;
        ra != rb
    }
}

#[test]
fn single_linkage_replays_the_maximum_spanning_tree() {
    criterion(3, "maximum spanning tree correspondence", || {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        for _ in 0..50 {
            let n = rng.gen_range(2..=30);
            let (full, matrix) = random_similarity(n, &mut rng);
            let dendro = cluster(&matrix, Linkage::Single).unwrap();

            let mut edges = Vec::new();
            for u in 0..n {
                for v in (u + 1)..n {
                    edges.push((full[u][v], u, v));
                }
            }
            edges.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
            let mut dsu = Dsu::new(n);
            let accepted: Vec<(f64, usize, usize)> = edges
                .into_iter()
                .filter(|&(_, u, v)| dsu.union(u, v))
                .collect();

            assert_eq!(accepted.len(), dendro.merges().len());
            // Each accepted edge must join exactly the two clusters the
            // dendrogram joined at that step, at exactly its weight.
            let mut cluster_of: Vec<usize> = (0..n).collect();
            for (m, &(w, u, v)) in dendro.merges().iter().zip(&accepted) {
                assert_eq!(m.similarity.to_bits(), w.to_bits());
                let (cu, cv) = (cluster_of[u], cluster_of[v]);
                assert_eq!((m.left, m.right), (cu.min(cv), cu.max(cv)));
                let created = n - 1 + m.step;
                for c in &mut cluster_of {
                    if *c == m.left || *c == m.right {
                        *c = created;
                    }
                }
            }
        }
    });
}

#[test]
fn standardization_centers_and_scales_every_retained_column() {
    criterion(4, "standardization", || {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for _ in 0..100 {
            let n = rng.gen_range(2..=25);
            let n_attrs = rng.gen_range(1..=8);
            let mut constant: Vec<bool> = (0..n_attrs).map(|_| rng.gen_bool(0.25)).collect();
            if constant.iter().all(|&c| c) {
                constant[0] = false;
            }

            let mut text = String::new();
            for i in 0..n {
                text += &format!("E e{i:02} object - - m planned\n");
            }
            let mut expect_dropped: BTreeSet<String> =
                (0..n).map(|i| format!("adj:e{i:02}")).collect();
            let mut expect_kept = Vec::new();
            for (a, &is_constant) in constant.iter().enumerate() {
                let name = format!("q{a}");
                if is_constant {
                    let v: f64 = rng.gen_range(-5.0..5.0);
                    for i in 0..n {
                        text += &format!("A e{i:02} {name} {v:?}\n");
                    }
                    expect_dropped.insert(format!("attr:{name}"));
                } else {
                    for i in 0..n {
                        let v: f64 = rng.gen_range(-5.0..5.0);
                        text += &format!("A e{i:02} {name} {v:?}\n");
                    }
                    expect_kept.push(format!("attr:{name}"));
                }
            }

            let parsed = facts::parse(&text).unwrap();
            let raw = extract_structural_features(
                &parsed.graph,
                &RelationWeights::<f64>::default(),
                &parsed.attributes,
            );
            let result = standardize(raw).unwrap();

            let dropped: BTreeSet<String> = result.dropped.iter().cloned().collect();
            assert_eq!(dropped, expect_dropped);
            assert_eq!(result.matrix.schema().names(), expect_kept.as_slice());

            let count = result.matrix.n_rows() as f64;
            for c in 0..result.matrix.dimension() {
                let mean: f64 =
                    result.matrix.rows().iter().map(|r| r[c]).sum::<f64>() / count;
                let var: f64 = result
                    .matrix
                    .rows()
                    .iter()
                    .map(|r| (r[c] - mean) * (r[c] - mean))
                    .sum::<f64>()
                    / count;
                assert!(mean.abs() <= 1e-9, "column {c} mean {mean:e}");
                assert!(
                    (var.sqrt() - 1.0).abs() <= 1e-9,
                    "column {c} std {:e}",
                    var.sqrt()
                );
            }
        }
    });
}

#[test]
fn similarity_is_the_guarded_reciprocal_of_distance() {
    criterion(5, "metric identities", || {
        assert_eq!(similarity(0.0_f64), 1e12);
        assert_eq!(
            euclidean_distance(&[0.0_f64, 0.0], &[3.0, 4.0]).unwrap(),
            5.0
        );
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        for _ in 0..1000 {
            let d = 10f64.powf(rng.gen_range(-12.0..=6.0));
            let s = similarity(d);
            assert!(
                (s * d - 1.0).abs() <= f64::EPSILON,
                "similarity({d:e}) * d = {}",
                s * d
            );
        }
    });
}

#[test]
fn every_linkage_recovers_two_well_separated_cliques() {
    criterion(6, "synthetic recovery", || {
        let text = fs::read_to_string(sample("two_cliques.p2n")).unwrap();
        let parsed = facts::parse(&text).unwrap();
        let graph = &parsed.graph;
        let features = standardize(extract_structural_features(
            graph,
            &RelationWeights::<f64>::default(),
            &parsed.attributes,
        ))
        .unwrap();
        let sim = similarity_matrix(&features.matrix).unwrap();

        // Recompute every pair by hand and confirm the clique structure:
        // the weakest within-module similarity still beats the strongest
        // cross-module one.
        let rows = features.matrix.rows();
        let n = rows.len();
        let mut intra_min = f64::INFINITY;
        let mut cross_max = f64::NEG_INFINITY;
        for i in 0..n {
            for j in (i + 1)..n {
                let mut sq: f64 = 0.0;
                for (a, b) in rows[i].iter().zip(&rows[j]) {
                    sq += (a - b) * (a - b);
                }
                let expected = 1.0 / f64::max(sq.sqrt(), 1e-12);
                assert_eq!(sim.sim(i, j).to_bits(), expected.to_bits());
                if graph.entity(i).declared_module == graph.entity(j).declared_module {
                    intra_min = intra_min.min(expected);
                } else {
                    cross_max = cross_max.max(expected);
                }
            }
        }
        assert!(intra_min > cross_max, "{intra_min} vs {cross_max}");

        let declared = declared_partition(graph);
        for linkage in Linkage::ALL {
            let dendro = cluster(&sim, linkage).unwrap();
            let flat = cut(&dendro, CutRule::Clusters(2)).unwrap();
            assert_eq!(agreement(&flat, &declared).unwrap(), 1.0, "{linkage}");
        }
    });
}

#[test]
fn maintenance_marks_match_the_fixed_table() {
    criterion(7, "maintenance classification", || {
        use MaintenanceCategory::{Adaptability, Corrective, Perfection};
        let expected: [(&str, &[MaintenanceCategory]); 7] = [
            ("intelligibility", &[Corrective]),
            ("testability", &[Corrective]),
            ("modifiability", &[Corrective, Adaptability]),
            ("reliability", &[Corrective]),
            ("portability", &[Adaptability]),
            ("usability", &[Adaptability, Perfection]),
            ("efficiency", &[Perfection]),
        ];
        let mut marks = 0;
        for (quality, categories) in expected {
            assert_eq!(classify_maintenance(quality).unwrap(), categories);
            marks += categories.len();
        }
        assert_eq!(marks, 9);
        let table_marks: usize = MAINTENANCE_TABLE.iter().map(|(_, c)| c.len()).sum();
        assert_eq!(table_marks, 9);
        assert!(classify_maintenance("velocity").is_err());
        assert!(classify_maintenance("Usability").is_err());
    });
}

const ARTIFACTS: [&str; 7] = [
    "dendrogram.json",
    "tree.nwk",
    "tree.dot",
    "assignment.csv",
    "report.txt",
    "suggestions.csv",
    "agreement.txt",
];

fn artifact_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    ARTIFACTS
        .iter()
        .map(|name| (name.to_string(), fs::read(dir.join(name)).unwrap()))
        .collect()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_p2n"))
}

struct LiveCoordinator {
    child: Child,
    addr: String,
    lines: Arc<Mutex<Vec<String>>>,
}

fn spawn_coordinator(input: &Path, out: &Path) -> LiveCoordinator {
    let mut child = bin()
        .arg("coordinate")
        .arg("--input")
        .arg(input)
        .arg("--out")
        .arg(out)
        .args(["--listen", "127.0.0.1:0"])
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let stderr = child.stderr.take().unwrap();
    let lines: Arc<Mutex<Vec<String>>> = Arc::default();
    let sink = Arc::clone(&lines);
    thread::spawn(move || {
        for line in std::io::BufReader::new(stderr).lines().map_while(Result::ok) {
            sink.lock().unwrap().push(line);
        }
    });
    let addr = wait_for(&lines, 20, |ls| {
        ls.iter()
            .find_map(|l| l.strip_prefix("listening on ").map(str::to_string))
    });
    LiveCoordinator { child, addr, lines }
}

fn wait_for<T>(
    lines: &Arc<Mutex<Vec<String>>>,
    secs: u64,
    pick: impl Fn(&[String]) -> Option<T>,
) -> T {
    let deadline = Instant::now() + Duration::from_secs(secs);
    loop {
        if let Some(v) = pick(&lines.lock().unwrap()) {
            return v;
        }
        assert!(
            Instant::now() < deadline,
            "expected coordinator output never appeared; got {:?}",
            lines.lock().unwrap()
        );
        thread::sleep(Duration::from_millis(10));
    }
}

fn connected_workers(lines: &[String]) -> usize {
    lines
        .iter()
        .filter(|l| l.starts_with("worker connected"))
        .count()
}

fn spawn_cli_worker(addr: &str) -> Child {
    bin()
        .args(["worker", "--connect", addr])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap()
}

fn wait_with_deadline(child: &mut Child, secs: u64) -> i32 {
    let deadline = Instant::now() + Duration::from_secs(secs);
    loop {
        if let Some(status) = child.try_wait().unwrap() {
            return status.code().unwrap_or(-1);
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            panic!("process overran its deadline");
        }
        thread::sleep(Duration::from_millis(20));
    }
}

/// Scripted worker that handshakes, accepts one task, signals that it holds
/// it, then waits for `release` and vanishes without replying. The
/// coordinator must move the orphaned task onto the survivors.
fn hold_a_task_then_vanish(
    addr: String,
    got_task: mpsc::Sender<()>,
    release: mpsc::Receiver<()>,
) -> thread::JoinHandle<()> {
    thread::spawn(move || {
        let stream = TcpStream::connect(addr).unwrap();
        let mut writer = stream.try_clone().unwrap();
        write_message(
            &mut writer,
            &Message::Hello {
                worker_id: "flaky".into(),
                version: PROTOCOL_VERSION.into(),
            },
        )
        .unwrap();
        let mut reader = FrameReader::new(stream);
        assert!(matches!(
            reader.read_message().unwrap(),
            Message::Welcome { .. }
        ));
        assert!(matches!(
            reader.read_message().unwrap(),
            Message::Dataset { .. }
        ));
        assert!(matches!(reader.read_message().unwrap(), Message::Task { .. }));
        got_task.send(()).unwrap();
        release.recv().unwrap();
    })
}

#[test]
fn distributed_runs_reproduce_the_local_artifacts() {
    criterion(8, "distributed equals local", || {
        let input = sample("two_cliques.p2n");
        let base = tempfile::tempdir().unwrap();

        let local_dir = base.path().join("local");
        let status = bin()
            .arg("cluster")
            .arg("--input")
            .arg(&input)
            .arg("--out")
            .arg(&local_dir)
            .status()
            .unwrap();
        assert!(status.success());
        let expected = artifact_bytes(&local_dir);

        // One worker.
        let out = base.path().join("one");
        let mut coord = spawn_coordinator(&input, &out);
        let mut worker = spawn_cli_worker(&coord.addr);
        assert_eq!(wait_with_deadline(&mut coord.child, 60), 0);
        assert_eq!(wait_with_deadline(&mut worker, 30), 0);
        assert_eq!(artifact_bytes(&out), expected);

        // Two workers. The second may arrive after the job is already
        // finished, so only the coordinator's exit code is binding.
        let out = base.path().join("two");
        let mut coord = spawn_coordinator(&input, &out);
        let mut workers: Vec<Child> = (0..2).map(|_| spawn_cli_worker(&coord.addr)).collect();
        assert_eq!(wait_with_deadline(&mut coord.child, 60), 0);
        for w in &mut workers {
            let _ = wait_with_deadline(w, 30);
        }
        assert_eq!(artifact_bytes(&out), expected);

        // Four workers, one of which dies holding a task.
        let out = base.path().join("four");
        let mut coord = spawn_coordinator(&input, &out);
        let (task_tx, task_rx) = mpsc::channel();
        let (release_tx, release_rx) = mpsc::channel();
        let flaky = hold_a_task_then_vanish(coord.addr.clone(), task_tx, release_rx);
        task_rx
            .recv_timeout(Duration::from_secs(20))
            .expect("flaky worker never got a task");
        let mut workers: Vec<Child> = (0..3).map(|_| spawn_cli_worker(&coord.addr)).collect();
        wait_for(&coord.lines, 20, |ls| {
            (connected_workers(ls) >= 4).then_some(())
        });
        release_tx.send(()).unwrap();
        flaky.join().unwrap();
        assert_eq!(wait_with_deadline(&mut coord.child, 60), 0);
        for w in &mut workers {
            let _ = wait_with_deadline(w, 30);
        }
        assert_eq!(artifact_bytes(&out), expected);
    });
}

#[test]
fn thousand_entity_pipeline_finishes_within_ten_seconds() {
    criterion(9, "single-process throughput", || {
        let mut rng = ChaCha8Rng::seed_from_u64(909);
        let n = 1000;
        let mut text = String::new();
        for i in 0..n {
            let status = ["planned", "coded", "tested"][rng.gen_range(0..3)];
            let module = rng.gen_range(0..10);
            text += &format!("E e{i:04} object - - m{module:02} {status}\n");
        }
        // A ring keeps every adjacency column informative; the rest is
        // noise on top.
        for i in 0..n {
            text += &format!("R ref e{i:04} e{:04}\n", (i + 1) % n);
        }
        for _ in 0..4000 {
            let (s, d) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if s != d {
                text += &format!("R ref e{s:04} e{d:04}\n");
            }
        }
        let parsed = facts::parse(&text).unwrap();

        let started = Instant::now();
        let raw = extract_structural_features(
            &parsed.graph,
            &RelationWeights::<f64>::default(),
            &parsed.attributes,
        );
        let features = standardize(raw).unwrap();
        let sim = similarity_matrix(&features.matrix).unwrap();
        let dendro = cluster(&sim, Linkage::UnweightedAverage).unwrap();
        let flat = cut(&dendro, CutRule::Clusters(10)).unwrap();
        let partition = partition_to_nodes(&flat, &parsed.graph).unwrap();
        let report = progress_report(&parsed.graph, &partition).unwrap();
        let moves = suggest_moves(&parsed.graph, &flat).unwrap();
        let agree = agreement(&flat, &declared_partition(&parsed.graph)).unwrap();
        let elapsed = started.elapsed();

        assert_eq!(report.total_members, n);
        assert!((0.0..=1.0).contains(&agree));
        drop(moves);
        assert!(
            elapsed <= Duration::from_secs(10),
            "pipeline took {elapsed:?}"
        );
    });
}

#[test]
fn sample_corpora_survive_a_parse_serialize_parse_cycle() {
    criterion(10, "facts round trip", || {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
        let mut checked = 0;
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if !path.extension().is_some_and(|e| e == "p2n") {
                continue;
            }
            let text = fs::read_to_string(&path).unwrap();
            let first = facts::parse(&text).unwrap();
            let canonical = facts::serialize(&first.graph, &first.attributes);
            let second = facts::parse(&canonical).unwrap();
            assert_eq!(first, second, "{}", path.display());
            assert_eq!(
                canonical,
                facts::serialize(&second.graph, &second.attributes),
                "{}",
                path.display()
            );
            checked += 1;
        }
        assert!(checked >= 3, "expected the sample corpora to be present");
    });
}
