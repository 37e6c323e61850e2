use bcct_core::nets::{Backbone, BcNet, Parameters};
use bcct_core::rng::{derive_seed, stream};
use bcct_core::synthdata::{gen_background, gen_labeled, ImageSample, Normalization};
use bcct_core::trainer::{heldout_backgrounds, pretrain_backbone, train_bc, train_bcct, AugmentToggles, TrainConfig};

struct Fixture {
    train: Vec<ImageSample>,
    test: Vec<ImageSample>,
    background: Vec<ImageSample>,
    norm: Normalization,
}

fn fixture() -> Fixture {
    let train = gen_labeled(derive_seed(1, "train", 0), 24, 3, 16, 16).unwrap();
    let test = gen_labeled(derive_seed(1, "test", 0), 8, 3, 16, 16).unwrap();
    let background = gen_background(derive_seed(1, "background", 0), 4, 16, 16);
    let norm = Normalization::from_samples(&train);
    Fixture { train, test, background, norm }
}

fn tiny() -> TrainConfig {
    TrainConfig {
        seed: 3,
        pretrain_epochs: 1,
        bc_epochs: 2,
        epochs: 2,
        batch_size: 8,
        ..TrainConfig::default()
    }
}

fn bytes<P: Parameters<f32>>(p: &P) -> Vec<u8> {
    p.to_checkpoint().to_bytes().unwrap()
}

#[test]
fn bc_training_never_touches_the_backbone() {
    let f = fixture();
    let cfg = tiny();
    let backbone = Backbone::<f32>::new(&mut stream(5, "bb", 0));
    let held = heldout_backgrounds(1, 8, 16, 16);
    let bc = train_bc(&cfg, &f.train, &f.background, &f.test, &held, &f.norm, backbone.clone()).unwrap();
    assert_eq!(bytes(&bc.net.backbone), bytes(&backbone));
    assert!((0.0..=1.0).contains(&bc.heldout_acc));

    let before = bytes(&bc.net);
    train_bcct(&cfg, &f.train, &f.norm, backbone, &bc.net, 3).unwrap();
    assert_eq!(bytes(&bc.net), before);
}

#[test]
fn zero_lambda_ignores_the_masks_entirely() {
    let f = fixture();
    let mut cfg = tiny();
    cfg.lambda_mask = 0.0;
    let backbone = Backbone::<f32>::new(&mut stream(5, "bb", 0));
    let bc_a = BcNet::new(backbone.clone(), &mut stream(5, "fc", 0));
    let bc_b = BcNet::new(Backbone::new(&mut stream(6, "other", 0)), &mut stream(6, "fc", 0));
    let a = train_bcct(&cfg, &f.train, &f.norm, backbone.clone(), &bc_a, 3).unwrap();
    let b = train_bcct(&cfg, &f.train, &f.norm, backbone.clone(), &bc_b, 3).unwrap();
    assert_eq!(bytes(&a.net), bytes(&b.net));
    let cls: Vec<f64> = a.log.iter().map(|e| e.cls_loss).collect();
    assert_eq!(cls, b.log.iter().map(|e| e.cls_loss).collect::<Vec<_>>());

    cfg.lambda_mask = 1.0;
    let c = train_bcct(&cfg, &f.train, &f.norm, backbone, &bc_a, 3).unwrap();
    assert_ne!(bytes(&c.net), bytes(&a.net));
}

#[test]
fn logged_total_is_recomputed_exactly() {
    let f = fixture();
    let mut cfg = tiny();
    cfg.lambda_mask = 0.7;
    let backbone = Backbone::<f32>::new(&mut stream(5, "bb", 0));
    let bc = BcNet::new(backbone.clone(), &mut stream(5, "fc", 0));
    let out = train_bcct(&cfg, &f.train, &f.norm, backbone, &bc, 3).unwrap();
    assert_eq!(out.log.len(), 2);
    for e in &out.log {
        assert_eq!(e.total_loss, e.cls_loss + 0.7 * e.mask_loss);
        assert!(e.mask_loss > 0.0);
        assert_eq!(e.threads, 1);
    }
}

#[test]
fn stages_are_deterministic() {
    let f = fixture();
    let mut cfg = tiny();
    cfg.augment = AugmentToggles::default();
    let a = pretrain_backbone::<f32>(&cfg, &f.train, &f.test, &f.norm, 3).unwrap();
    let b = pretrain_backbone::<f32>(&cfg, &f.train, &f.test, &f.norm, 3).unwrap();
    assert_eq!(bytes(&a.backbone), bytes(&b.backbone));
    assert_eq!(a.initial_loss.to_bits(), b.initial_loss.to_bits());
    assert!((a.initial_loss - 3f64.ln()).abs() < 1.0, "initial loss {}", a.initial_loss);

    let bc = BcNet::new(a.backbone.clone(), &mut stream(5, "fc", 0));
    let x = train_bcct(&cfg, &f.train, &f.norm, a.backbone.clone(), &bc, 3).unwrap();
    let y = train_bcct(&cfg, &f.train, &f.norm, a.backbone.clone(), &bc, 3).unwrap();
    assert_eq!(bytes(&x.net), bytes(&y.net));
    let strip = |l: &[bcct_core::trainer::EpochLog]| l.iter().map(|e| (e.cls_loss.to_bits(), e.mask_loss.to_bits())).collect::<Vec<_>>();
    assert_eq!(strip(&x.log), strip(&y.log));

    cfg.seed = 4;
    let c = pretrain_backbone::<f32>(&cfg, &f.train, &f.test, &f.norm, 3).unwrap();
    assert_ne!(bytes(&a.backbone), bytes(&c.backbone));
}
