#include <cmath>

#include "mfcl/train.hpp"

namespace mfcl {

std::vector<std::size_t> half_pairing(std::size_t rows) {
  if (rows < 2 || rows % 2 != 0) throw ShapeError("pairing needs an even number of rows >= 2");
  std::vector<std::size_t> partner(rows);
  const std::size_t half = rows / 2;
  for (std::size_t i = 0; i < rows; ++i) partner[i] = i < half ? i + half : i - half;
  return partner;
}

double nt_xent_oracle(const std::vector<std::vector<double>>& latents, const std::vector<std::size_t>& partner,
                      double temperature) {
  const std::size_t m = latents.size();
  if (m < 2 || m % 2 != 0) throw ShapeError("nt_xent_oracle: need an even number of latents >= 2");
  if (partner.size() != m) throw ShapeError("nt_xent_oracle: pairing size differs from latent count");
  if (!(temperature > 0.0)) throw ConfigError("nt_xent_oracle: temperature must be > 0");
  for (std::size_t i = 0; i < m; ++i) {
    if (partner[i] >= m || partner[i] == i || partner[partner[i]] != i) {
      throw ShapeError("nt_xent_oracle: pairing is not a fixed-point-free involution at row " + std::to_string(i));
    }
  }

  std::vector<double> norm(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (double v : latents[i]) s += v * v;
    norm[i] = std::sqrt(s);
    if (!(norm[i] > 0.0)) throw NumericError("nt_xent_oracle: latent row " + std::to_string(i) + " has zero norm");
  }
  auto cosine = [&](std::size_t a, std::size_t b) {
    double dot = 0.0;
    for (std::size_t k = 0; k < latents[a].size(); ++k) dot += latents[a][k] * latents[b][k];
    return dot / (norm[a] * norm[b]);
  };

  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double denom = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      if (k != i) denom += std::exp(cosine(i, k) / temperature);
    }
    const double numer = std::exp(cosine(i, partner[i]) / temperature);
    total += -std::log(numer / denom);
  }
  return total / static_cast<double>(m);
}

}  // namespace mfcl
