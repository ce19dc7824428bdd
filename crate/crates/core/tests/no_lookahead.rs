use cycletree::data::standardize;
use cycletree::ecm::{fit, ConvergenceConfig};
use cycletree::ensemble::{predictor_vector, AugmentationConfig, Variant};
use cycletree::evaluate::{cycle_views, target_series};
use cycletree::model::ModelShape;
use cycletree::synthetic::{simulate_study, SyntheticConfig};

#[test]
fn truncating_the_panel_leaves_earlier_windows_unchanged() {
    let syn = SyntheticConfig { shape: ModelShape::baseline(3), len: 120, cycle: vec![1.4, -0.5], ..Default::default() };
    let study = simulate_study(&syn).unwrap();
    let full = study.vintage(120);
    let (z, eta) = standardize(&full.select(&study.macro_ids).unwrap()).unwrap();
    let conv = ConvergenceConfig { max_iter: 40, ..Default::default() };
    let (params, _) = fit(&z, &syn.shape, &eta, &cycletree::model::PenaltyConfig::new(0.1, 0.5, 1.2).unwrap(), &conv).unwrap();
    let aug = AugmentationConfig::default();
    let views = cycle_views(&params, &z, &aug).unwrap();
    let y = target_series(&full, "PRICE1", cycletree::data::TransformSpec::MoMSquaredReturn).unwrap();
    for t in [13, 40, 77, 119] {
        let cut = z.truncate(t);
        let cut_views = cycle_views(&params, &cut, &aug).unwrap();
        let a = predictor_vector(&y[..t], Some(&cut_views), &aug, Variant::Augmented, t).unwrap().unwrap();
        let b = predictor_vector(&y, Some(&views), &aug, Variant::Augmented, t).unwrap().unwrap();
        assert_eq!(a.len(), 77);
        assert_eq!(a, b, "window at t = {t}");
    }
}
