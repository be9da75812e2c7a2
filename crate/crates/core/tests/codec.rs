use predcode::codec::{self, CodecConfig, UplinkMessage};
use predcode::entropy::{self, arithmetic_decode, arithmetic_encode, Bitstream, FrequencyTable};
use predcode::predictor::{MemoryVariant, PredictionMode, PredictorConfig, PredictorMemory};
use predcode::quantizer::{self, deinterleave_sign, interleave_sign, QuantizerConfig, QuantizerFamily};
use predcode::{DecodeStage, Error, ParamVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn table_and_symbols() -> impl Strategy<Value = (Vec<u32>, Vec<u32>)> {
    (1usize..40).prop_flat_map(|alphabet| {
        (
            prop::collection::vec(1u32..5000, alphabet),
            prop::collection::vec(0u32..alphabet as u32, 0..300),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn arithmetic_coding_round_trips((counts, symbols) in table_and_symbols()) {
        let table = FrequencyTable::from_counts(counts).unwrap();
        let bits = arithmetic_encode(&symbols, &table).unwrap();
        prop_assert_eq!(arithmetic_decode(&bits, &table, symbols.len()).unwrap(), symbols);
    }

    #[test]
    fn adaptive_table_round_trips_through_bytes((_, symbols) in table_and_symbols()) {
        prop_assume!(!symbols.is_empty());
        let alphabet = *symbols.iter().max().unwrap() as usize + 1;
        let table = FrequencyTable::from_symbols(&symbols, alphabet).unwrap();
        let table = FrequencyTable::from_bytes(&table.to_bytes().unwrap(), alphabet).unwrap();
        let bits = arithmetic_encode(&symbols, &table).unwrap();
        prop_assert_eq!(arithmetic_decode(&bits, &table, symbols.len()).unwrap(), symbols);
    }

    #[test]
    fn fixed_length_round_trips(symbols in prop::collection::vec(0u32..7, 0..200)) {
        let bits = entropy::encode_fixed(&symbols, 7).unwrap();
        prop_assert_eq!(bits.bit_len, 3 * symbols.len());
        prop_assert_eq!(entropy::decode_fixed(&bits, 7, symbols.len()).unwrap(), symbols);
    }

    #[test]
    fn sign_interleaving_is_a_bijection(s in 1u32..200, level in -200i64..=200) {
        prop_assume!(level.unsigned_abs() <= s as u64);
        let h = interleave_sign(level, s).unwrap();
        prop_assert!(h <= 2 * s);
        prop_assert_eq!(deinterleave_sign(h), level);
        let expected = if level <= 0 { -2 * level } else { 2 * level - 1 };
        prop_assert_eq!(h as i64, expected);
    }

    #[test]
    fn uplink_container_round_trips(
        mode in 1u8..=4,
        norm in any::<f32>().prop_filter("finite", |x| x.is_finite()),
        table in prop::collection::vec(any::<u8>(), 0..40),
        payload in prop::collection::vec(any::<bool>(), 0..300),
    ) {
        let mut bytes = vec![0u8; payload.len().div_ceil(8)];
        for (i, &b) in payload.iter().enumerate() {
            if b {
                bytes[i / 8] |= 0x80 >> (i % 8);
            }
        }
        let msg = UplinkMessage {
            mode: PredictionMode::from_id(mode).unwrap(),
            norm,
            table,
            payload: Bitstream::new(bytes, payload.len()).unwrap(),
        };
        let wire = msg.to_bytes().unwrap();
        prop_assert_eq!(UplinkMessage::from_bytes(&wire).unwrap(), msg.clone());
        if !wire.is_empty() {
            let cut = &wire[..wire.len() - 1];
            let is_container_error = matches!(
                UplinkMessage::from_bytes(cut),
                Err(Error::Decode { stage: DecodeStage::Container, .. })
            );
            prop_assert!(is_container_error);
        }
    }
}

#[test]
fn unknown_mode_byte_is_rejected() {
    let msg = UplinkMessage {
        mode: PredictionMode::Identity,
        norm: 1.0,
        table: vec![],
        payload: Bitstream::new(vec![], 0).unwrap(),
    };
    let mut wire = msg.to_bytes().unwrap();
    wire[0] = 9;
    assert!(matches!(
        UplinkMessage::from_bytes(&wire),
        Err(Error::Decode { stage: DecodeStage::Mode, .. })
    ));
}

fn codec_cfg(family: QuantizerFamily, s: u32, entropy_coding: bool) -> CodecConfig {
    CodecConfig {
        predictor: PredictorConfig::with_modes(PredictionMode::ALL.to_vec()),
        quantizer: QuantizerConfig {
            levels: s,
            family,
            ..QuantizerConfig::default()
        },
        entropy_coding,
    }
}

fn noisy_step(w: &ParamVector, rng: &mut ChaCha8Rng) -> ParamVector {
    use rand_distr::{Distribution, StandardNormal};
    ParamVector::new(
        w.iter()
            .map(|x| x - 0.01 + 0.003 * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect(),
    )
}

#[test]
fn encoder_and_decoder_stay_bit_identical() {
    for family in [QuantizerFamily::Uniform, QuantizerFamily::Stochastic, QuantizerFamily::RdSelect] {
        for entropy_coding in [true, false] {
            let cfg = codec_cfg(family, 3, entropy_coding);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let d = 300;
            let mut worker = PredictorMemory::new(d);
            let mut server = PredictorMemory::new(d);
            let mut w0 = ParamVector::filled(d, 0.5);
            for _ in 0..20 {
                let local = noisy_step(&w0, &mut rng);
                let enc = codec::encode(&local, &w0, &mut worker, &cfg, &mut rng).unwrap();
                let msg = UplinkMessage::from_bytes(&enc.message.to_bytes().unwrap()).unwrap();
                let w_hat = codec::decode(&msg, &w0, &mut server, &cfg).unwrap();
                assert!(w_hat.iter().zip(enc.w_hat.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
                assert!(worker.bit_eq(&server));
                w0 = w_hat;
            }
        }
    }
}

#[test]
fn large_level_count_is_nearly_lossless() {
    let cfg = codec_cfg(QuantizerFamily::Uniform, quantizer::MAX_LEVELS, true);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w0 = ParamVector::filled(100, 0.1);
    let local = noisy_step(&w0, &mut rng);
    let mut mem = PredictorMemory::new(100);
    let enc = codec::encode(&local, &w0, &mut mem, &cfg, &mut rng).unwrap();
    assert!(UplinkMessage::from_bytes(&enc.message.to_bytes().unwrap()).is_ok());
    let e_norm = local.sub(&w0).norm2();
    // half a quantization step per coordinate, plus f32 rounding of the norm
    let step = e_norm / quantizer::MAX_LEVELS as f64;
    assert!(enc.w_hat.sub(&local).norm_inf() <= 0.5 * step + 1e-7 * e_norm);
}

#[test]
fn fixed_length_message_size_is_structural() {
    let cfg = CodecConfig {
        predictor: PredictorConfig::with_modes(vec![PredictionMode::Identity]),
        quantizer: QuantizerConfig::default(),
        entropy_coding: false,
    };
    let d = 500;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w0 = ParamVector::zeros(d);
    let local = noisy_step(&w0, &mut rng);
    let enc = codec::encode(&local, &w0, &mut PredictorMemory::new(d), &cfg, &mut rng).unwrap();
    assert_eq!(enc.message.size_bits(), 2 + 32 + 2 * d as u64);
}

#[test]
fn global_memory_is_not_touched_by_the_codec() {
    let mut cfg = codec_cfg(QuantizerFamily::Stochastic, 1, true);
    cfg.predictor.memory = MemoryVariant::Global;
    let d = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w0 = ParamVector::zeros(d);
    let mut mem = PredictorMemory::new(d);
    let before = mem.clone();
    let enc = codec::encode(&noisy_step(&w0, &mut rng), &w0, &mut mem, &cfg, &mut rng).unwrap();
    codec::decode(&enc.message, &w0, &mut mem, &cfg).unwrap();
    assert!(mem.bit_eq(&before));
}
