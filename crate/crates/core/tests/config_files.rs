use std::fs;

use pmefv::io::{load_config, read_cell_vector, write_run_outputs, InitialData, MeshSource};
use pmefv::mesh::{build_uniform_grid, write_mesh, BoxDomain};
use pmefv::solver::run;

#[test]
fn mesh_file_and_initial_file_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let mesh = build_uniform_grid(&BoxDomain::new(&[0.0, 0.0], &[2.0, 1.0]), &[6, 3]).unwrap();
    fs::write(tmp.path().join("grid.mesh"), write_mesh(&mesh)).unwrap();

    let first =
        "[mesh]\nfile = grid.mesh\n[time]\nn = 4\nT = 0.2\n[model]\nq = 2\nu0 = box(2)\n[output]\ndir = first\n";
    fs::write(tmp.path().join("first.ini"), first).unwrap();
    let cfg = load_config(tmp.path().join("first.ini")).unwrap();
    assert_eq!(cfg.mesh, MeshSource::File(tmp.path().join("grid.mesh")));
    let loaded = cfg.build_mesh().unwrap();
    assert_eq!(loaded.num_cells(), 18);
    let u0 = cfg.initial_vector(&loaded).unwrap();
    let (field, report) = run(&loaded, &cfg.time_grid().unwrap(), &u0, &cfg.solver).unwrap();
    let dir = cfg.output_dir.clone().unwrap();
    let written = write_run_outputs(&dir, &field, &report).unwrap();
    assert_eq!(written.len(), 3);

    // continue from the final state through the file preset
    let second = first
        .replace("u0 = box(2)", "u0 = file(first/final.csv)")
        .replace("dir = first", "dir = second");
    fs::write(tmp.path().join("second.ini"), second).unwrap();
    let cfg2 = load_config(tmp.path().join("second.ini")).unwrap();
    assert!(matches!(cfg2.initial, InitialData::File(_)));
    let restart = cfg2.initial_vector(&loaded).unwrap();
    assert_eq!(restart.values(), field.slot(4));
    let values = read_cell_vector(dir.join("final.csv")).unwrap();
    assert_eq!(values, field.slot(4));
}

#[test]
fn initial_file_with_wrong_length_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("u.csv"), "cell_id,value\n0,1.0\n1,2.0\n").unwrap();
    let text = "[mesh]\ndomain = 0 1\ncells = 3\n[time]\nn = 1\nT = 1\n[model]\nq = 1\nu0 = file(u.csv)\n";
    fs::write(tmp.path().join("c.ini"), text).unwrap();
    let cfg = load_config(tmp.path().join("c.ini")).unwrap();
    let mesh = cfg.build_mesh().unwrap();
    assert!(cfg.initial_vector(&mesh).is_err());

    fs::write(tmp.path().join("u.csv"), "cell_id,value\n0,1.0\n2,2.0\n").unwrap();
    assert!(read_cell_vector(tmp.path().join("u.csv")).is_err());
}

#[test]
fn barenblatt_preset_is_centred_with_unit_mass() {
    let tmp = tempfile::tempdir().unwrap();
    let text =
        "[mesh]\ndomain = -2 4 -3 3\ncells = 48 48\n[time]\nn = 1\nT = 0.1\n[model]\nq = 2\nu0 = barenblatt(1)\n";
    fs::write(tmp.path().join("c.ini"), text).unwrap();
    let cfg = load_config(tmp.path().join("c.ini")).unwrap();
    let mesh = cfg.build_mesh().unwrap();
    let u0 = cfg.initial_vector(&mesh).unwrap();
    let (mut mass, mut first_moment) = (0.0, 0.0);
    for (c, v) in mesh.cells().iter().zip(u0.values()) {
        mass += c.measure * v;
        first_moment += c.measure * v * c.center[0];
    }
    assert!((mass - 1.0).abs() < 1e-2, "mass {mass}");
    assert!((first_moment / mass - 1.0).abs() < 1e-10);
    assert!(cfg.reference(&mesh).unwrap().is_some());
}
