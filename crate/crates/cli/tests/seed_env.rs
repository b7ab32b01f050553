//! Kept apart from the other command tests because it changes the
//! process environment.

use revise_cli::run;

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = |name: &str| dir.path().join(name).display().to_string();
    let synth = |file: &str| run(["revise", "synth", "classification", "--n", "50", "--out", &out(file)]);

    std::env::set_var("REVISE_SEED", "not-a-number");
    assert_eq!(synth("bad.csv"), 1);

    std::env::set_var("REVISE_SEED", "17");
    assert_eq!(synth("env.csv"), 0);
    std::env::remove_var("REVISE_SEED");
    assert_eq!(run(["revise", "synth", "classification", "--n", "50", "--seed", "17", "--out", &out("flag.csv")]), 0);
    assert_eq!(synth("default.csv"), 0);

    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("env.csv"), read("flag.csv"));
    assert_ne!(read("env.csv"), read("default.csv"));
}
