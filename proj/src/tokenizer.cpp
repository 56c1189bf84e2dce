#include "hmae/tokenizer.hpp"

#include <cmath>

namespace hmae {

Eigen::VectorXd Token::features(const TokenizerConfig& cfg) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(cfg.token_dim());
  v(0) = magnitude;
  v(1) = phase;
  for (std::size_t s = 0; s < slot_types.size(); ++s) {
    const int offset = 2 + 3 * static_cast<int>(s);
    v(offset + (static_cast<int>(slot_types[s]) - 1)) = 1.0;  // X=0, Y=1, Z=2 within slot
  }
  const int site_offset = 2 + 3 * cfg.max_locality;
  for (int i = 0; i < cfg.n_qubits; ++i) v(site_offset + i) = sites[i] ? 1.0 : 0.0;
  return v;
}

TokenSequence tokenize(const Hamiltonian& h, const TokenizerConfig& cfg) {
  if (h.n_qubits() > cfg.n_qubits)
    throw config_error("tokenize: Hamiltonian has more qubits than the tokenizer config");
  TokenSequence seq;
  seq.n_qubits = cfg.n_qubits;
  seq.tokens.reserve(h.n_terms());
  for (std::size_t i = 0; i < h.n_terms(); ++i) {
    const auto& term = h.term(i);
    Token tok;
    tok.magnitude = std::abs(term.coeff);
    if (tok.magnitude == 0.0) {
      tok.phase = 0.0;
    } else if (term.coeff.imag() == 0.0) {
      tok.phase = term.coeff.real() < 0.0 ? M_PI : 0.0;
    } else {
      tok.phase = std::arg(term.coeff);
    }
    tok.sites.assign(static_cast<std::size_t>(cfg.n_qubits), 0);
    for (int s = 0; s < term.pauli.n_qubits(); ++s) {
      if (term.pauli.op(s) == Pauli::I) continue;
      tok.slot_types.push_back(term.pauli.op(s));  // ascending site order
      tok.sites[static_cast<std::size_t>(s)] = 1;
    }
    if (static_cast<int>(tok.slot_types.size()) > cfg.max_locality)
      throw config_error("tokenize: term " + term.pauli.to_string() +
                         " exceeds max locality " + std::to_string(cfg.max_locality));
    seq.tokens.push_back(std::move(tok));
  }
  return seq;
}

Hamiltonian detokenize(const TokenSequence& seq, const TokenizerConfig& cfg) {
  std::vector<HamiltonianTerm> terms;
  for (const auto& tok : seq.tokens) {
    if (tok.magnitude == 0.0) continue;  // canonical zero token carries no term
    int popcount = 0;
    for (auto b : tok.sites) popcount += b ? 1 : 0;
    if (popcount != static_cast<int>(tok.slot_types.size()))
      throw validation_error("detokenize: sites popcount does not match type slots");

    std::vector<Pauli> ops(static_cast<std::size_t>(cfg.n_qubits), Pauli::I);
    std::size_t slot = 0;
    for (int s = 0; s < cfg.n_qubits; ++s)
      if (tok.sites[static_cast<std::size_t>(s)]) ops[static_cast<std::size_t>(s)] = tok.slot_types[slot++];

    cplx coeff;
    if (tok.phase == 0.0) {
      coeff = tok.magnitude;
    } else if (tok.phase == M_PI) {
      coeff = -tok.magnitude;
    } else {
      coeff = std::polar(tok.magnitude, tok.phase);
    }
    terms.emplace_back(coeff, PauliString(std::move(ops)));
  }
  return Hamiltonian(cfg.n_qubits, std::move(terms));
}

Eigen::MatrixXd token_features(const TokenSequence& seq, const TokenizerConfig& cfg) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(seq.size()), cfg.token_dim());
  for (std::size_t i = 0; i < seq.size(); ++i)
    m.row(static_cast<Eigen::Index>(i)) = seq.tokens[i].features(cfg).transpose();
  return m;
}

}  // namespace hmae
