use super::config::{ChannelPolicy, ModelConfig};
use super::params::{decoder_layout, encoder_layout, init_from_layout, random_row, ParamSet};
use crate::diff::Tensor;
use crate::error::{invalid, Error, Result};
use crate::rng::stream;
use crate::signals::ChannelVocabulary;

const ENCODER_STREAM: u64 = 0xe4c0;
const DECODER_STREAM: u64 = 0xdec0;
const NEW_CHANNEL_STREAM: u64 = 0xc4a7;

/// Every learnable tensor of the model.
///
/// `momentum` mirrors `online` name for name and is only ever changed by
/// [`ModelState::ema_update`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub vocab: ChannelVocabulary,
    pub online: ParamSet,
    pub momentum: ParamSet,
    pub decoder: ParamSet,
    /// Seed used at initialization; also seeds rows for admitted channels.
    pub seed: u64,
}

impl ModelState {
    pub fn init(config: ModelConfig, vocab: ChannelVocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab.len() > config.max_channels {
            return Err(invalid(format!(
                "vocabulary has {} channels, model.max_channels is {}",
                vocab.len(),
                config.max_channels
            )));
        }
        let online = init_from_layout(
            &encoder_layout(&config, vocab.len()),
            &mut stream(seed, &[ENCODER_STREAM]),
        );
        let decoder = init_from_layout(
            &decoder_layout(&config, vocab.len()),
            &mut stream(seed, &[DECODER_STREAM]),
        );
        let momentum = online.clone();
        Ok(Self {
            config,
            vocab,
            online,
            momentum,
            decoder,
            seed,
        })
    }

    /// Checks every parameter set against the configuration.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let enc = encoder_layout(&self.config, self.vocab.len());
        self.online.check_layout("online encoder", &enc)?;
        self.momentum.check_layout("momentum encoder", &enc)?;
        self.decoder
            .check_layout("decoder", &decoder_layout(&self.config, self.vocab.len()))
    }

    /// Embedding rows for `names` under the strict policy.
    pub fn channel_rows(&self, names: &[String]) -> Result<Vec<usize>> {
        self.vocab.resolve(names)
    }

    /// Resolves `names`, appending unknown channels when the policy allows it.
    ///
    /// New rows are drawn from N(0, 0.02²) and shared by the online and
    /// momentum tables so the two encoders stay aligned.
    pub fn admit_channels(&mut self, names: &[String]) -> Result<Vec<usize>> {
        let mut rows = Vec::with_capacity(names.len());
        for name in names {
            if let Some(r) = self.vocab.index_of(name) {
                rows.push(r);
                continue;
            }
            if self.config.channel_policy == ChannelPolicy::Strict {
                return Err(Error::UnknownChannel(name.clone()));
            }
            if self.vocab.len() >= self.config.max_channels {
                return Err(invalid(format!(
                    "cannot admit `{name}`: model.max_channels ({}) reached",
                    self.config.max_channels
                )));
            }
            let r = self.vocab.push(name);
            let mut rng = stream(self.seed, &[NEW_CHANNEL_STREAM, r as u64]);
            let enc_row = random_row(self.config.d_model, &mut rng);
            let dec_row = random_row(self.config.dec_d_model, &mut rng);
            for set in [&mut self.online, &mut self.momentum] {
                append_row(set, "chan_emb", &enc_row);
            }
            append_row(&mut self.decoder, "chan_emb", &dec_row);
            rows.push(r);
        }
        Ok(rows)
    }

    /// `momentum ← μ·momentum + (1 − μ)·online`, elementwise.
    pub fn ema_update(&mut self, mu: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(invalid(format!(
                "EMA coefficient must lie in [0, 1], got {mu}"
            )));
        }
        let online = &self.online;
        self.momentum.map_entries(|name, m| {
            let o = online.get(name).expect("momentum and online share names");
            let data = m
                .data()
                .iter()
                .zip(o.data())
                .map(|(&m, &o)| mu * m + (1.0 - mu) * o)
                .collect();
            Tensor::new(m.shape().to_vec(), data).expect("same shape")
        });
        Ok(())
    }

    /// Trainable scalars: online encoder plus decoder.
    pub fn n_trainable(&self) -> usize {
        self.online.numel() + self.decoder.numel()
    }
}

fn append_row(set: &mut ParamSet, name: &str, row: &[f64]) {
    let t = set.get(name).expect("embedding table present");
    let mut data = t.data().to_vec();
    data.extend_from_slice(row);
    let grown = Tensor::new(vec![t.rows() + 1, t.cols()], data).expect("row width matches");
    set.insert(name, grown);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> ModelState {
        ModelState::init(ModelConfig::gradcheck(4), ChannelVocabulary::grid(4), 5).unwrap()
    }

    #[test]
    fn init_is_seeded_and_consistent() {
        let a = state();
        a.validate().unwrap();
        assert_eq!(a, state());
        assert_eq!(a.online, a.momentum);
        let b = ModelState::init(ModelConfig::gradcheck(4), ChannelVocabulary::grid(4), 6).unwrap();
        assert_ne!(a.online, b.online);
    }

    #[test]
    fn ema_endpoints_and_arithmetic() {
        let mut s = state();
        s.online.map_entries(|_, t| t.map(|v| v + 1.0));
        let before = s.momentum.clone();
        s.ema_update(1.0).unwrap();
        assert_eq!(s.momentum, before);
        s.ema_update(0.0).unwrap();
        assert_eq!(s.momentum, s.online);
        assert!(s.ema_update(1.5).is_err());

        let mut s = state();
        s.momentum.map_entries(|_, t| t.map(|_| 0.0));
        s.online.map_entries(|_, t| t.map(|_| 1.0));
        s.ema_update(0.996).unwrap();
        for (_, t) in s.momentum.iter() {
            assert!(t.data().iter().all(|&v| (v - 0.004).abs() < 1e-15));
        }
    }

    #[test]
    fn channel_policy() {
        let mut s = state();
        let names = vec!["E02".to_string(), "Cz".to_string()];
        assert!(matches!(s.admit_channels(&names), Err(Error::UnknownChannel(n)) if n == "Cz"));
        s.config.channel_policy = ChannelPolicy::AllowNew;
        assert_eq!(s.admit_channels(&names).unwrap(), vec![1, 4]);
        s.validate().unwrap();
        assert_eq!(s.online.get("chan_emb").unwrap().rows(), 5);
        assert_eq!(
            s.online.get("chan_emb").unwrap().row(4),
            s.momentum.get("chan_emb").unwrap().row(4)
        );
        assert_eq!(s.admit_channels(&names).unwrap(), vec![1, 4]);
    }
}
