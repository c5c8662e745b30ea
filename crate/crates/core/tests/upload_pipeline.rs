//! One client upload through the public API: train, perturb, prove,
//! compress, frame, seal, then open and check on the server side.

use ztfed_core::channel::{
    compress, compress_lossless, decrypt_and_verify, dequantize, encrypt_and_mac, pack_update, unpack_update,
    ChannelKey, CompressionConfig, Direction,
};
use ztfed_core::data::{mask_dataset, synth_wind, MaskConfig, SynthConfig};
use ztfed_core::dp::{perturb, DpConfig};
use ztfed_core::model::{train_local, AdamConfig, AdamState, Mas2s, Mas2sConfig};
use ztfed_core::nizk::{nizk_prove, nizk_verify, GroupParams, NizkSecret};
use ztfed_core::rng::derive_rng;
use ztfed_core::Error;

fn trained() -> (Mas2s, ztfed_core::ModelParams, usize) {
    let synth = SynthConfig { farms: 1, samples_per_farm: 6, sequence_length: 12, power_noise: 0.02 };
    let ds = &synth_wind(&synth, 4).unwrap()[0];
    let mask = MaskConfig { run_length_max: 8, ..MaskConfig::default() };
    let batch: Vec<_> = mask_dataset(ds, &mask, 4).unwrap().into_iter().map(|w| w.sequence).collect();
    let cfg = Mas2sConfig { hidden_size: 4, heads: 1, key_dim: 2, sequence_length: 12, ..Mas2sConfig::default() };
    let mut params = cfg.init_params(&mut derive_rng(4, "init", 0)).unwrap();
    let model = Mas2s::bind(cfg, params.specs()).unwrap();
    let mut adam = AdamState::new(AdamConfig::default(), params.param_count());
    train_local(&model, &mut params, &batch, 2, 3, &mut adam, &mut derive_rng(4, "train", 0)).unwrap();
    (model, params, batch.len())
}

#[test]
fn honest_upload_survives_every_check() {
    let (_, clean, n) = trained();
    let grp = GroupParams::test_512();
    let mut rng = derive_rng(9, "client", 0);
    let secret = NizkSecret::random(&grp, &mut rng);
    let dp = DpConfig::default();
    let tau = clean.l2_norm();
    let p = perturb(&clean, &dp, tau, n, &secret.seed_bytes()).unwrap();
    assert!(p.sigma > 0.0);
    let proof = nizk_prove(&secret, &grp, &p.noised, &clean).unwrap();

    let key = ChannelKey::new([7; 32]);
    for lossless in [true, false] {
        let comp = if lossless {
            compress_lossless(&p.noised).unwrap()
        } else {
            compress(&p.noised, &CompressionConfig::default()).unwrap()
        };
        let frame = pack_update(&comp, Direction::Upload, Some(&proof)).unwrap();
        let sealed = encrypt_and_mac(&frame, &key, [3; 16], Direction::Upload);

        let opened = decrypt_and_verify(&sealed, &key).unwrap();
        let update = unpack_update(&opened, clean.specs()).unwrap();
        let got = update.proof.expect("proof travels with the upload");
        assert!(nizk_verify(&got, &grp));
        let dense = dequantize(&update.params).unwrap();
        if lossless {
            assert_eq!(got.digest_noised, dense.digest());
        } else {
            assert!(dense.same_layout(&clean));
        }
    }
}

#[test]
fn tampering_is_caught_at_the_right_layer() {
    let (_, clean, _) = trained();
    let grp = GroupParams::test_512();
    let secret = NizkSecret::random(&grp, &mut derive_rng(9, "client", 1));
    let proof = nizk_prove(&secret, &grp, &clean, &clean).unwrap();
    let frame = pack_update(&compress_lossless(&clean).unwrap(), Direction::Upload, Some(&proof)).unwrap();
    let key = ChannelKey::new([1; 32]);

    let mut sealed = encrypt_and_mac(&frame, &key, [0; 16], Direction::Upload);
    sealed.ciphertext[0] ^= 0x80;
    assert_eq!(decrypt_and_verify(&sealed, &key), Err(Error::MacMismatch));

    let mut forged = proof.clone();
    forged.digest_clean.0[0] ^= 1;
    assert!(!nizk_verify(&forged, &grp));

    assert!(unpack_update(&frame[..frame.len() - 1], clean.specs()).is_err());
}
