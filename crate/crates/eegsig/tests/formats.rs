use eegsig::io::{self, Manifest};
use eegsig::{extract_features, segment, synth_dataset, SynthSpec};
use spatial::{ElectrodeLayout, RegionScheme, SchemeKind};

fn small_corpus() -> Vec<eegsig::SynthTrial> {
    let layout = ElectrodeLayout::standard_62();
    let scheme = RegionScheme::builtin(SchemeKind::Lobe).unwrap();
    let mut spec = SynthSpec::strong(&scheme, 2, 1, 6.0, 5);
    spec.duration_s = 3.0;
    synth_dataset(&spec, &layout, &scheme).unwrap()
}

#[test]
fn eegr_round_trip_is_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    let rec = &small_corpus()[1].recording;
    let manifest = io::save_recording(dir.path(), "c1_t0", rec).unwrap();
    let first = std::fs::read(dir.path().join("c1_t0.eegr")).unwrap();
    let loaded = io::load_recording(&manifest).unwrap();
    assert_eq!(loaded.channel_names(), rec.channel_names());
    assert_eq!(loaded.label(), Some(1));
    assert_eq!(io::encode_eegr(&loaded).unwrap(), first);
    for (a, b) in loaded.samples().iter().zip(rec.samples()) {
        assert_eq!(*a, *b as f32 as f64);
    }
    let m = Manifest::read(&manifest).unwrap();
    assert_eq!(m.file, "c1_t0.eegr");
    assert_eq!(m.channels, ElectrodeLayout::standard_62().names());
}

#[test]
fn deft_round_trip_is_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    let rec = &small_corpus()[0].recording;
    let f = extract_features(rec, 1.0).unwrap();
    let manifest = io::save_features(dir.path(), "c0_t0", &f, rec.channel_names()).unwrap();
    let bytes = std::fs::read(dir.path().join("c0_t0.deft")).unwrap();
    assert_eq!(&bytes[..4], b"DEFT");
    assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 3);
    assert_eq!(u16::from_le_bytes(bytes[10..12].try_into().unwrap()), 62);
    assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 5);
    assert_eq!(f32::from_le_bytes(bytes[14..18].try_into().unwrap()), 1.0);
    let (loaded, names) = io::load_features(&manifest).unwrap();
    assert_eq!(names, rec.channel_names());
    assert_eq!(loaded.label(), Some(0));
    assert_eq!(io::encode_deft(&loaded).unwrap(), bytes);
}

#[test]
fn segments_reshape_back_to_windows() {
    let rec = &small_corpus()[0].recording;
    let f = extract_features(rec, 1.0).unwrap();
    let s = segment(&f, 2, 1).unwrap();
    assert_eq!(s.len(), 2);
    for seg in 0..s.len() {
        let block = s.segment(seg);
        for c in 0..f.n_channels() {
            let token = &block[c * 10..(c + 1) * 10];
            for (tau, window) in token.chunks(5).enumerate() {
                for b in 0..5 {
                    assert_eq!(window[b], f.get(seg + tau, c, b));
                }
            }
        }
    }
}
