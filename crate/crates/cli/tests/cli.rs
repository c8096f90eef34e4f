use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn holo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_holo"))
        .args(args)
        .env_remove("HOLO_SEED")
        .env_remove("HOLO_JOBS")
        .output()
        .expect("run holo")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulated(seed: &str, vehicles: &str) -> TempDir {
    let dir = TempDir::new().unwrap();
    let o = holo(&[
        "--seed",
        seed,
        "simulate",
        "-o",
        dir.path().to_str().unwrap(),
        "--vehicles",
        vehicles,
        "--cycles",
        "8",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const WINDOW: &str = "fTime=2020-09-15 07:00:00\ntTime=2020-09-15 08:00:00\n";

fn one_loop(id: &str) -> String {
    format!(
        "loop.1.loopId={id}\nloop.1.ftNode=N1_N2\nloop.1.position=20\nloop.1.missingRate=0.1\nloop.1.interval=300\n"
    )
}

#[test]
fn verify_net_reports_full_sensing() {
    let dir = TempDir::new().unwrap();
    write(
        dir.path(),
        "nodes.csv",
        "NODEID,AVI,LON,LAT\nA,1,0.000000,0.000000\nB,0,0.001000,0.000000\nC,1,0.002000,0.000000\n",
    );
    write(
        dir.path(),
        "roads.csv",
        "ROADID,LANENUM,TURN,DN_ROAD,GEOM,LEN\n\
         A_B,1,S,B_C,\"LINESTRING(0 0, 0.001 0)\",100.000\n\
         B_C,1,,,\"LINESTRING(0.001 0, 0.002 0)\",100.000\n",
    );
    let o = holo(&["verify-net", "-d", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("is_fsrn: true"));
}

#[test]
fn build_trips_recovers_every_simulated_vehicle() {
    let dir = simulated("11", "80");
    let d = dir.path().to_str().unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    let vehicles = manifest["simulated_vehicles"].as_u64().unwrap();
    let o = holo(&["build-trips", "-d", d]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains(&format!("trips: {vehicles}\n")), "{}", stdout(&o));
    assert!(stdout(&o).contains("disconnections: 0\n"));

    let o = holo(&["--seed", "11", "reconstruct", "-d", d]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("reconstructed.json").exists());
}

#[test]
fn lorenz_of_equal_distances_is_diagonal() {
    let dir = TempDir::new().unwrap();
    let d = write(dir.path(), "d.txt", "12.5\n12.5\n12.5\n12.5\n12.5\n");
    let out = dir.path().join("lorenz.csv");
    let o = holo(&["analyze", "--distances", &d, "--lorenz", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("POPULATION_SHARE,DISTANCE_SHARE"));
    let points: Vec<(f64, f64)> = lines
        .map(|l| {
            let (x, y) = l.split_once(',').unwrap();
            (x.parse().unwrap(), y.parse().unwrap())
        })
        .collect();
    assert_eq!(points.len(), 6);
    for (i, (x, y)) in points.iter().enumerate() {
        assert_eq!(x, y);
        assert!((x - i as f64 / 5.0).abs() < 1e-6);
    }
}

#[test]
fn measure_one_loop_without_fcd() {
    let dir = simulated("5", "60");
    let props = write(dir.path(), "m.properties", &format!("{WINDOW}needFCD=false\n{}", one_loop("L7")));
    let o = holo(&["measure", "-d", dir.path().to_str().unwrap(), "-c", &props]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut names: Vec<String> = fs::read_dir(dir.path().join("measurement"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["L7.csv", "manifest.json"]);
    let rows = fs::read_to_string(dir.path().join("measurement/L7.csv")).unwrap();
    assert!(rows.starts_with("ROAD_ID,FTIME,TTIME,INT,COUNT"));
    assert_eq!(rows.lines().count(), 1 + 12);
}

#[test]
fn unknown_property_key_exits_2_and_names_it() {
    let dir = simulated("5", "20");
    let props = write(dir.path(), "m.properties", &format!("{WINDOW}needFcd=true\n"));
    let o = holo(&["measure", "-d", dir.path().to_str().unwrap(), "-c", &props]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("needFcd"), "{}", stderr(&o));
    assert!(!dir.path().join("measurement").exists());
}

#[test]
fn same_seed_gives_identical_outputs() {
    let run = |dir: &Path, seed: &str| -> Vec<(String, Vec<u8>)> {
        let props = write(dir, "m.properties", &format!("{WINDOW}needFCD=true\nfcdSamplingSec=5\n{}", one_loop("A")));
        let o = holo(&["--seed", seed, "measure", "-d", dir.to_str().unwrap(), "-c", &props]);
        assert!(o.status.success(), "{}", stderr(&o));
        let out = dir.join("measurement");
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        fs::remove_dir_all(out).unwrap();
        files
    };
    let a = simulated("9", "60");
    let b = simulated("9", "60");
    for name in ["lpr.csv", "trajectories.json", "signal_plans.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let first = run(a.path(), "4");
    assert_eq!(first.len(), 3);
    assert_eq!(first, run(a.path(), "4"));
    assert_eq!(first, run(b.path(), "4"));
    assert_ne!(first, run(a.path(), "5"));
}

#[test]
fn seed_comes_from_environment() {
    let dir = simulated("21", "30");
    let env = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_holo"))
        .args(["simulate", "-o", env.path().to_str().unwrap(), "--vehicles", "30", "--cycles", "8"])
        .env("HOLO_SEED", "21")
        .env("HOLO_JOBS", "2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(dir.path().join("lpr.csv")).unwrap(),
        fs::read(env.path().join("lpr.csv")).unwrap()
    );
}

#[test]
fn failed_measure_removes_partial_outputs() {
    let dir = simulated("5", "30");
    let out = dir.path().join("measurement");
    fs::create_dir_all(out.join("B.csv")).unwrap();
    let props = write(
        dir.path(),
        "m.properties",
        &format!(
            "{WINDOW}{}loop.2.loopId=B\nloop.2.ftNode=N0_N1\nloop.2.position=0\nloop.2.missingRate=0\nloop.2.interval=60\n",
            one_loop("A")
        ),
    );
    let o = holo(&["measure", "-d", dir.path().to_str().unwrap(), "-c", &props]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(!out.join("A.csv").exists());
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn exit_codes_follow_error_kind() {
    let scratch = TempDir::new().unwrap();
    let s = scratch.path();

    let props = write(s, "m.properties", WINDOW);
    let o = holo(&["measure", "-d", s.join("missing").to_str().unwrap(), "-c", &props]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let dir = simulated("5", "20");
    let props = write(s, "u.properties", &format!("{WINDOW}{}", one_loop("A").replace("N1_N2", "N1_N9")));
    let o = holo(&["measure", "-d", dir.path().to_str().unwrap(), "-c", &props]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let params = write(s, "p.toml", "q_m = 0.36\nk_m = 0.06\nk_j = 0.19\nv_f = 15.0\nextra = 1\n");
    let o = holo(&["--params", &params, "simulate", "-o", s.join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let over = s.join("over");
    let o = holo(&["simulate", "-o", over.to_str().unwrap(), "--vehicles", "270", "--cycles", "10"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(!over.exists());

    let o = holo(&["build-trips", "-d", dir.path().to_str().unwrap(), "--lpr", s.join("none.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}
