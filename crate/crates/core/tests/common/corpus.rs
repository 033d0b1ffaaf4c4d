use spiral_core::audio::{synth_corpus, AudioSource, MelFrontend, SynthConfig, SynthUtterance, Waveform};
use spiral_core::config::Config;
use spiral_core::ctc::{LabelledUtterance, Vocabulary};
use spiral_core::spiral::TrainUtterance;

pub fn frontend() -> MelFrontend {
    MelFrontend::new(Config::default().frontend)
}

pub fn synth(n: usize, seed: u64) -> Vec<SynthUtterance> {
    synth_corpus(n, seed, &Vocabulary::characters(), &SynthConfig::default()).unwrap()
}

pub fn waveform(u: &SynthUtterance) -> Waveform {
    match &u.record.audio {
        AudioSource::Samples(w) => w.clone(),
        AudioSource::Path(p) => spiral_core::audio::read_wav(p).unwrap(),
    }
}

pub fn train_set(utts: &[SynthUtterance], frontend: &MelFrontend) -> Vec<TrainUtterance> {
    utts.iter()
        .map(|u| TrainUtterance::new(&u.record.id, waveform(u), frontend).unwrap())
        .collect()
}

pub fn labelled_set(utts: &[SynthUtterance], frontend: &MelFrontend) -> Vec<LabelledUtterance> {
    let vocab = Vocabulary::characters();
    utts.iter()
        .map(|u| LabelledUtterance::new(&u.record.id, &u.record.transcript, waveform(u), &vocab, frontend).unwrap())
        .collect()
}
