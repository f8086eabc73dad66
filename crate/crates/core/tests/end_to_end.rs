use roiforge_core::cohort_analytics::{overlay_from_manifest, overlay_map};
use roiforge_core::cohort_prep::{
    assemble_approach, assemble_in_memory, scan_cohort_dir, sls_extent_reports, AssembleParams,
};
use roiforge_core::phantom::{generate_cases, generate_cohort};
use roiforge_core::roi_optimizer::plan_crop;
use roiforge_core::seg_metrics::{discover_pairs, evaluate_pairs, EvaluationSettings};
use roiforge_core::volume_io::{bit_identical, load_volume, save_volume};
use roiforge_core::{Approach, CohortManifest, PatientCase, PhantomSpec};

fn spec(seed: u64) -> PhantomSpec {
    PhantomSpec { patients: 4, seed, ..PhantomSpec::default() }
}

#[test]
fn disk_and_memory_assembly_agree() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec(21);
    generate_cohort(&spec, &dir.path().join("src")).unwrap();
    let (sources, excluded) = scan_cohort_dir(&dir.path().join("src")).unwrap();
    assert!(excluded.is_empty());
    let from_disk: Vec<PatientCase> = sources.iter().map(|s| PatientCase::load(s).unwrap()).collect();
    let in_memory = generate_cases(&spec).unwrap();

    let plan = plan_crop(&sls_extent_reports(&from_disk).unwrap(), 32).unwrap();
    assert_eq!(plan, plan_crop(&sls_extent_reports(&in_memory).unwrap(), 32).unwrap());
    let params = AssembleParams {
        crop_plan: Some(plan),
        compress: true,
        ..AssembleParams::default()
    };
    let out = dir.path().join("ov");
    let m = assemble_approach(&from_disk, Approach::BrsOv, &params, 5, &out).unwrap();
    let mem = assemble_in_memory(&in_memory, Approach::BrsOv, &params, 5).unwrap();

    let back = CohortManifest::read(out.join("manifest.json")).unwrap();
    back.validate().unwrap();
    for (entry, case) in back.patients.iter().zip(&mem) {
        let sub = load_volume(back.resolve(entry.subtraction.as_ref().unwrap())).unwrap();
        assert!(bit_identical(&sub, case.subtraction.as_ref().unwrap()));
        assert_eq!(entry.oversampling.as_ref(), Some(&case.oversampling));
        assert_eq!(entry.crop_offset, case.crop_offset);
    }

    let streamed = overlay_from_manifest(&m).unwrap();
    let pairs: Vec<_> = mem.iter().map(|c| (c.region_mask.clone(), c.lesion_mask.clone())).collect();
    assert_eq!(streamed, overlay_map(&pairs).unwrap());
}

#[test]
fn ground_truth_scored_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let cases = generate_cases(&spec(3)).unwrap();
    let m = assemble_approach(&cases, Approach::BrsSls, &AssembleParams::default(), 1, &dir.path().join("sls")).unwrap();
    let preds = dir.path().join("preds");
    std::fs::create_dir_all(&preds).unwrap();
    for p in &m.patients {
        let gt = roiforge_core::volume_io::load_mask(m.resolve(&p.lesion_mask)).unwrap();
        let prob = gt.to_volume().with_data(gt.data.mapv(|v| if v == 1 { 0.9f32 } else { 0.1 }));
        save_volume(&prob, preds.join(format!("{}.nii.gz", p.patient_id))).unwrap();
    }
    let pairs = discover_pairs(&preds, &dir.path().join("sls/manifest.json")).unwrap();
    assert_eq!(pairs.len(), 4);
    let report = evaluate_pairs(&pairs, &EvaluationSettings::default()).unwrap();
    assert_eq!(report.average.dice.mean, 1.0);
    assert_eq!(report.average.dice.std, 0.0);
    assert!(report.fn_bin_totals.iter().all(|&n| n == 0));
}

#[test]
fn left_biased_phantom_histogram_leans_left() {
    let mut s = spec(8);
    s.patients = 6;
    s.lesions.left_bias = 0.9;
    s.lesions.count_min = 2;
    s.lesions.count_max = 3;
    let cases = generate_cases(&s).unwrap();
    let pairs: Vec<_> = cases.iter().map(|c| (c.region_mask.clone(), c.lesion_mask.clone())).collect();
    let map = overlay_map(&pairs).unwrap();
    let (x, _) = roiforge_core::cohort_analytics::axis_histograms(&map);
    let half = x.values.len() / 2;
    let left: u64 = x.values[..half].iter().sum();
    let right: u64 = x.values[half..].iter().sum();
    assert!(left > right, "left {left}, right {right}");
}
