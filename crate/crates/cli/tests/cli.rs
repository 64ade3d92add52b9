use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

fn salp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_salp")).args(args).output().expect("run salp")
}

fn ok(args: &[&str]) -> Output {
    let out = salp(args);
    assert!(out.status.success(), "salp {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    salp(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Blobs, a split, a projection and a propagated session archive.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let f = Self { _dir: dir, root };
        ok(&["synth", "--blobs", "3", "--dims", "4", "--n", "90", "--sep", "5", "--seed", "4", "--out", s(&f.path("ds"))]);
        ok(&["split", "--dataset", s(&f.manifest()), "--fractions", "0.1,0.6,0.3", "--seed", "2", "--out", s(&f.path("split.txt"))]);
        ok(&[
            "project", "--dataset", s(&f.manifest()), "--split", s(&f.path("split.txt")), "--perplexity", "10", "--iters", "300",
            "--seed", "3", "--out", s(&f.path("proj.txt")),
        ]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn manifest(&self) -> PathBuf {
        self.path("ds/manifest.txt")
    }

    fn archive(&self, name: &str, tau: &str) -> PathBuf {
        let out = self.path(name);
        ok(&[
            "propagate", "--dataset", s(&self.manifest()), "--split", s(&self.path("split.txt")), "--projection",
            s(&self.path("proj.txt")), "--tau", tau, "--out", s(&out),
        ]);
        out
    }

    fn run(&self, name: &str, seeds: &str) -> PathBuf {
        let (out, manifest) = (self.path(name), self.manifest());
        let args = [
            "run", "--dataset", s(&manifest), "--protocol", "nlp,alp2d,salp", "--seeds", seeds, "--perplexity", "10",
            "--iters", "300", "--tau", "0.6", "--quiet", "--out", s(&out),
        ];
        ok(&args);
        out
    }
}

#[test]
fn run_is_deterministic_and_comparable() {
    let f = Fixture::new();
    let a = f.run("a", "1,2");
    let b = f.run("b", "1,2");
    for file in ["report.txt", "summary.txt"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file} differs");
    }
    let report = fs::read_to_string(a.join("report.txt")).unwrap();
    assert!(report.starts_with("# salp-report v1 dataset="));
    assert_eq!(report.lines().filter(|l| !l.starts_with('#')).count(), 1 + 6);

    let out = ok(&["compare", s(&a.join("report.txt")), s(&b.join("report.txt"))]);
    let table = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[..3], rows[3..]);
}

#[test]
fn compare_rejects_mismatched_reports() {
    let f = Fixture::new();
    let a = f.run("a", "1,2").join("report.txt");
    let c = f.run("c", "1").join("report.txt");
    assert_eq!(code(&["compare", s(&a)]), 2);
    assert_eq!(code(&["compare", s(&a), s(&c)]), 2);

    ok(&["synth", "--blobs", "3", "--dims", "4", "--n", "90", "--sep", "5", "--seed", "9", "--out", s(&f.path("other"))]);
    let other = f.path("o");
    ok(&[
        "run", "--dataset", s(&f.path("other/manifest.txt")), "--protocol", "nlp,alp2d,salp", "--seeds", "1,2", "--perplexity",
        "10", "--iters", "300", "--tau", "0.6", "--quiet", "--out", s(&other),
    ]);
    assert_eq!(code(&["compare", s(&a), s(&other.join("report.txt"))]), 2);
}

#[test]
fn exit_codes_follow_failure_class() {
    let f = Fixture::new();
    let m = f.manifest();
    let out = f.path("x");
    assert_eq!(code(&["run", "--dataset", s(&f.path("missing.txt")), "--out", s(&out)]), 2);
    assert_eq!(code(&["run", "--dataset", s(&m), "--tau", "1.5", "--out", s(&out)]), 2);
    assert_eq!(code(&["run", "--dataset", s(&m), "--protocol", "bogus", "--out", s(&out)]), 2);
    assert_eq!(code(&["run", "--dataset", s(&m), "--fractions", "0.5,0.5", "--out", s(&out)]), 2);
    assert_eq!(code(&["run", "--dataset", s(&m)]), 2);
    assert_eq!(code(&["frobnicate"]), 2);

    fs::write(f.path("ds/labels.txt"), "0\n1\n").unwrap();
    let failed = salp(&["split", "--dataset", s(&m), "--out", s(&f.path("s2.txt"))]);
    assert_eq!(failed.status.code(), Some(3));
    let stderr = String::from_utf8(failed.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "diagnostic should be one line: {stderr}");
}

#[test]
fn propagate_writes_a_loadable_archive() {
    let f = Fixture::new();
    let arch = f.archive("arch", "0.6");
    for file in ["session.txt", "split.txt", "projection.txt", "propagation.txt", "tau.txt", "manual_labels.txt"] {
        assert!(arch.join(file).exists(), "{file} missing");
    }
    assert_eq!(fs::read_to_string(arch.join("tau.txt")).unwrap(), "0.6\n");
    assert_eq!(fs::read_to_string(arch.join("propagation.txt")).unwrap().lines().count(), 54);

    let nd = f.path("nd");
    ok(&[
        "propagate", "--dataset", s(&f.manifest()), "--split", s(&f.path("split.txt")), "--space", "nd", "--protocol",
        "alpnd", "--out", s(&nd),
    ]);
    assert_eq!(fs::read_to_string(nd.join("tau.txt")).unwrap(), "0\n");
    assert!(!nd.join("projection.txt").exists());

    let (m, split) = (f.manifest(), f.path("split.txt"));
    assert_eq!(code(&["propagate", "--dataset", s(&m), "--split", s(&split), "--out", s(&nd)]), 2, "2d without a projection");
}

fn spawn_server(archive: &Path, port: &str) -> (Child, String) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_salp"))
        .args(["serve", "--archive", s(archive), "--port", port, "--quiet"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap_or_else(|| panic!("unexpected banner {line:?}"));
    (child, addr.to_string())
}

fn http(addr: &str, method: &str, path: &str, body: &str) -> String {
    let mut stream = TcpStream::connect(addr).unwrap();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    response
}

fn interrupt(mut child: Child) {
    let status = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    let status = child.wait().unwrap();
    let mut stderr = String::new();
    child.stderr.take().unwrap().read_to_string(&mut stderr).unwrap();
    assert!(status.success(), "serve exited with {status}: {stderr}");
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[cfg(unix)]
#[test]
fn serve_saves_session_on_interrupt() {
    let f = Fixture::new();
    let arch = f.archive("arch", "1");

    let before = snapshot(&arch);
    let (child, _) = spawn_server(&arch, "0");
    interrupt(child);
    assert_eq!(snapshot(&arch), before, "untouched session should round-trip byte for byte");

    let residue_id = fs::read_to_string(arch.join("propagation.txt"))
        .unwrap()
        .lines()
        .find(|l| l.split_whitespace().nth(4).unwrap().parse::<f64>().unwrap() < 1.0)
        .map(|l| l.split_whitespace().next().unwrap().to_string())
        .unwrap();
    let (child, addr) = spawn_server(&arch, "0");
    let response = http(&addr, "POST", "/api/labels", &format!(r#"{{"assignments":[{{"id":{residue_id},"label":2}}]}}"#));
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    let response = http(&addr, "GET", "/api/session", "");
    assert!(response.contains(r#""manual":1"#), "{response}");
    interrupt(child);
    assert_eq!(fs::read_to_string(arch.join("manual_labels.txt")).unwrap(), format!("{residue_id} 2\n"));
}

#[test]
fn serve_reports_bad_archives_and_busy_ports() {
    let f = Fixture::new();
    let arch = f.archive("arch", "0.6");
    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    assert_eq!(code(&["serve", "--archive", s(&arch), "--port", &port]), 4);

    fs::write(arch.join("tau.txt"), "sideways\n").unwrap();
    let out = salp(&["serve", "--archive", s(&arch), "--port", "0"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().contains("tau.txt"));
    assert_eq!(code(&["serve", "--archive", s(&f.path("nowhere")), "--port", "0"]), 2);
}
