use crate::error::{contract_err, dim_err, Result};
use crate::tensor::Tensor;

/// Subtracts the instantaneous mean over channels from every channel.
pub fn average_reference(eeg: &Tensor) -> Result<Tensor> {
    if eeg.ndim() != 2 {
        return Err(dim_err!("expected channels x samples, got {:?}", eeg.shape()));
    }
    let (c, s) = (eeg.shape()[0], eeg.shape()[1]);
    if c < 2 {
        return Err(contract_err!("average reference needs at least 2 channels"));
    }
    let mut out = eeg.clone();
    let data = out.data_mut();
    for t in 0..s {
        let mean = (0..c).map(|ch| data[ch * s + t]).sum::<f64>() / c as f64;
        for ch in 0..c {
            data[ch * s + t] -= mean;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn identical_channels_vanish() {
        let eeg = Tensor::new(&[32, 3], [1.5, -2.0, 7.0].repeat(32)).unwrap();
        assert!(average_reference(&eeg).unwrap().data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn antisymmetric_pair_unchanged() {
        let eeg = Tensor::new(&[2, 3], vec![1., -4., 2., -1., 4., -2.]).unwrap();
        assert_eq!(average_reference(&eeg).unwrap(), eeg);
    }

    #[test]
    fn subtracts_mean_at_each_sample() {
        let eeg = Tensor::new(&[3, 1], vec![1., 2., 3.]).unwrap();
        assert_eq!(average_reference(&eeg).unwrap().data(), &[-1., 0., 1.]);
    }

    #[test]
    fn single_channel_rejected() {
        let eeg = Tensor::new(&[1, 4], vec![1.; 4]).unwrap();
        assert!(matches!(average_reference(&eeg), Err(crate::Error::Contract(_))));
    }
}
