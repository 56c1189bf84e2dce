#pragma once

#include <Eigen/Dense>
#include <vector>

#include "hmae/pauli.hpp"

namespace hmae {

struct TokenizerConfig {
  int n_qubits = 4;
  int max_locality = 4;  // L

  /// feature layout: [|c|, phi, one-hot(X,Y,Z) per slot x L, sites bitmap x n]
  int token_dim() const { return 2 + 3 * max_locality + n_qubits; }
};

/// One Hamiltonian term as [|c|, phi, type one-hot, sites]. Non-identity
/// Paulis occupy type slots in ascending site order.
struct Token {
  double magnitude = 0.0;
  double phase = 0.0;                 // in (-pi, pi]; real coefficients give {0, pi}
  std::vector<Pauli> slot_types;      // length <= L, no identities
  std::vector<std::uint8_t> sites;    // length n bitmap

  Eigen::VectorXd features(const TokenizerConfig& cfg) const;
};

struct TokenSequence {
  std::vector<Token> tokens;
  int n_qubits = 0;

  std::size_t size() const { return tokens.size(); }
};

TokenSequence tokenize(const Hamiltonian& h, const TokenizerConfig& cfg);
Hamiltonian detokenize(const TokenSequence& seq, const TokenizerConfig& cfg);

/// Stacked feature rows, one per token: size() x token_dim.
Eigen::MatrixXd token_features(const TokenSequence& seq, const TokenizerConfig& cfg);

}  // namespace hmae
