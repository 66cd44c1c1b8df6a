use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_hdmed");

fn hdmed(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hdmed(dir, args);
    assert!(
        out.status.success(),
        "{args:?} exited with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    hdmed(dir, args).status.code().unwrap()
}

fn write_specs(dir: &Path) {
    let params = "[[params]]\nname = \"t1\"\nmin = 0.0\nmax = 1.0\ncount = 20\n\
                  [[params]]\nmin = 0.0\nmax = 1.0\ncount = 15\n\
                  [[params]]\nmin = 0.0\nmax = 1.0\ncount = 8\n";
    std::fs::write(dir.join("dict.toml"), format!("m = 24\nnoise_sd = 0.01\nseed = 1\n{params}")).unwrap();
    std::fs::write(dir.join("queries.toml"), format!("m = 24\nnoise_sd = 0.01\nseed = 2\nsample = 50\n{params}"))
        .unwrap();
}

fn pipeline(dir: &Path) {
    write_specs(dir);
    ok(dir, &["gen", "--spec", "dict.toml", "--out", "d.hdmd"]);
    ok(dir, &["gen", "--spec", "queries.toml", "--out", "q.hdmd"]);
    ok(
        dir,
        &["--threads", "2", "fit", "--dict", "d.hdmd", "--k", "3", "--batch", "256", "--init-rows", "1000", "--out", "m.hdmm", "--report", "fit.tsv"],
    );
    ok(dir, &["compress", "--dict", "d.hdmd", "--model", "m.hdmm", "--out", "c.hdmc"]);
    ok(dir, &["match", "--compressed", "c.hdmc", "--queries", "q.hdmd", "--out", "a.tsv"]);
    ok(dir, &["full-match", "--dict", "d.hdmd", "--queries", "q.hdmd", "--out", "b.tsv"]);
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pipeline(d);

    let info = ok(d, &["info", "d.hdmd"]);
    assert!(info.contains("kind\tdictionary"));
    assert!(info.contains("N\t2400"));
    assert!(info.contains("M\t24"));
    assert!(info.contains("L\t3"));
    assert!(ok(d, &["info", "q.hdmd"]).contains("N\t50"));
    assert!(ok(d, &["info", "m.hdmm"]).contains("kind\tmodel"));
    assert!(ok(d, &["info", "c.hdmc"]).contains("kind\tcompressed"));

    let matched = std::fs::read_to_string(d.join("a.tsv")).unwrap();
    assert!(matched.starts_with("query_id\tcluster\tdict_index\tdistance\tt_0\tt_1\tt_2\n"));
    assert_eq!(matched.lines().count(), 51);
    let mae = ok(d, &["eval", "--matched", "a.tsv", "--ref", "q.hdmd"]);
    assert!(mae.starts_with("parameter\tmae\n"));
    assert_eq!(mae.lines().count(), 4);
    let both = ok(d, &["eval", "--matched", "a.tsv", "--matched", "b.tsv"]);
    assert_eq!(both.lines().count(), 4);
    let rec = ok(d, &["eval", "--dict", "d.hdmd", "--model", "m.hdmm"]);
    assert!(rec.contains("reconstruction_rmse\t") && rec.contains("relative_rmse\t"));

    ok(d, &["select", "--dict", "d.hdmd", "--k-list", "1,2,3", "--batch", "256", "--init-rows", "1000", "--out", "bic.tsv"]);
    let table = std::fs::read_to_string(d.join("bic.tsv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(std::fs::read_to_string(d.join("fit.tsv")).unwrap().lines().count() > 1);
}

#[test]
fn outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for f in ["d.hdmd", "q.hdmd", "m.hdmm", "c.hdmc", "a.tsv", "b.tsv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn exit_codes_classify_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &[]), 2);
    assert_eq!(code(d, &["frobnicate"]), 2);
    assert_eq!(code(d, &["info", "--bogus", "x"]), 2);
    assert_eq!(code(d, &["info", "missing.hdmd"]), 3);
    assert_eq!(code(d, &["fit", "--dict", "missing.hdmd", "--k", "2", "--out", "m.hdmm"]), 3);
    std::fs::write(d.join("junk.hdmd"), b"not a dictionary at all").unwrap();
    assert_eq!(code(d, &["info", "junk.hdmd"]), 3);

    write_specs(d);
    ok(d, &["gen", "--spec", "dict.toml", "--out", "d.hdmd"]);
    assert_eq!(code(d, &["fit", "--dict", "d.hdmd", "--k", "0", "--out", "m.hdmm"]), 2);
    assert_eq!(code(d, &["fit", "--dict", "d.hdmd", "--k", "2", "--kappa", "0.3", "--out", "m.hdmm"]), 2);
    assert_eq!(code(d, &["gen", "--spec", "dict.toml", "--out", "no/such/dir/x.hdmd"]), 3);
    assert_eq!(code(d, &["--threads", "0", "info", "d.hdmd"]), 2);
    assert_eq!(code(d, &["eval"]), 2);
}

#[test]
fn every_subcommand_has_help() {
    let dir = tempfile::tempdir().unwrap();
    let top = ok(dir.path(), &["--help"]);
    for sub in ["gen", "fit", "select", "compress", "match", "full-match", "eval", "info"] {
        assert!(top.contains(sub), "{sub} missing from --help");
        let help = ok(dir.path(), &[sub, "--help"]);
        assert!(help.contains("Usage"), "{sub}");
    }
}
